// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0

#include "atkd/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace atkd {
namespace {

constexpr std::array<char, 4> kMagic = {'A', 'T', 'K', 'D'};
// Refuse absurd headers before allocating.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;
constexpr std::uint32_t kMaxRank = 16;

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((value >> (8 * i)) & 0xffu);
  }
  out.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> buf;
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw FormatError(std::string("ATKD stream truncated while reading ") + what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(buf[i]) << (8 * i);
  return value;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_atkd(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  for (double x : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
}

Tensor read_atkd(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 4 || magic != kMagic) throw FormatError("not an ATKD tensor (bad magic)");
  const auto rank = get_le<std::uint32_t>(in, "rank");
  if (rank == 0 || rank > kMaxRank) throw FormatError("ATKD rank " + std::to_string(rank) + " unsupported");
  Shape shape(rank);
  std::uint64_t volume = 1;
  for (auto& d : shape) {
    const auto dim = get_le<std::uint64_t>(in, "dims");
    if (dim == 0) throw FormatError("ATKD tensor has a zero dimension");
    if (dim > kMaxElements || volume * dim > kMaxElements) throw FormatError("ATKD tensor too large");
    volume *= dim;
    d = static_cast<std::size_t>(dim);
  }
  std::vector<double> data(static_cast<std::size_t>(volume));
  for (double& x : data) x = std::bit_cast<double>(get_le<std::uint64_t>(in, "payload"));
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("ATKD stream has trailing bytes");
  return Tensor(std::move(shape), std::move(data));
}

void save_atkd(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_atkd(out, t);
  if (!out) throw Error("write failed: " + path);
}

Tensor load_atkd(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_atkd(in);
}

void write_csv(std::ostream& out, const Tensor& t) {
  for (std::size_t s = 0; s < t.slice_count(); ++s) {
    auto row = t.slice(s);
    for (std::size_t v = 0; v < row.size(); ++v) {
      if (v) out << ',';
      out << format_double(row[v]);
    }
    out << '\n';
  }
}

Tensor read_csv(std::istream& in) {
  std::vector<double> data;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::size_t n = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      std::size_t used = 0;
      try {
        data.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size()) {
        throw FormatError("CSV row " + std::to_string(rows + 1) + ": bad number '" + cell + "'");
      }
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols || n == 0) throw FormatError("CSV row " + std::to_string(rows + 1) + " has inconsistent width");
    ++rows;
  }
  if (rows == 0) throw FormatError("CSV input is empty");
  return Tensor({rows, cols}, std::move(data));
}

void save_csv(const std::string& path, const Tensor& t) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_csv(out, t);
}

Tensor load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return read_csv(in);
}

}  // namespace atkd
