// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <iosfwd>
#include <string>

#include "atkd/tensor.hpp"

namespace atkd {

// ATKD binary layout (all little-endian):
//   bytes 0..3   magic "ATKD"
//   u32          rank
//   rank x u64   dims
//   f64 x prod(dims) row-major payload
// Readers reject wrong magic, zero dims, truncation and trailing bytes with FormatError.
void write_atkd(std::ostream& out, const Tensor& t);
Tensor read_atkd(std::istream& in);
void save_atkd(const std::string& path, const Tensor& t);
Tensor load_atkd(const std::string& path);

// One last-axis slice per row, comma separated, values printed with %.17g so the
// text form round-trips. Reading yields a rank-2 tensor [rows, cols].
void write_csv(std::ostream& out, const Tensor& t);
Tensor read_csv(std::istream& in);
void save_csv(const std::string& path, const Tensor& t);
Tensor load_csv(const std::string& path);

// %.17g-style shortest round-trippable formatting used across CSV outputs.
std::string format_double(double v);

}  // namespace atkd
