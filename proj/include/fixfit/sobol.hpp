#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fixfit/errors.hpp"

namespace fixfit {

namespace detail {

// Primitive polynomials (leading and trailing coefficients included) and
// initial direction numbers m_1..m_s for the first 21 dimensions, taken from
// the Joe & Kuo "new-joe-kuo-6.21201" table.
struct SobolDim {
  std::uint32_t poly;
  std::array<std::uint32_t, 7> m;
};

inline constexpr std::array<SobolDim, 21> kSobolTable{{
    {1, {1, 0, 0, 0, 0, 0, 0}},
    {3, {1, 0, 0, 0, 0, 0, 0}},
    {7, {1, 3, 0, 0, 0, 0, 0}},
    {11, {1, 3, 1, 0, 0, 0, 0}},
    {13, {1, 1, 1, 0, 0, 0, 0}},
    {19, {1, 1, 3, 3, 0, 0, 0}},
    {25, {1, 3, 5, 13, 0, 0, 0}},
    {37, {1, 1, 5, 5, 17, 0, 0}},
    {41, {1, 1, 5, 5, 5, 0, 0}},
    {47, {1, 1, 7, 11, 19, 0, 0}},
    {55, {1, 1, 5, 1, 1, 0, 0}},
    {59, {1, 1, 1, 3, 11, 0, 0}},
    {61, {1, 3, 5, 5, 31, 0, 0}},
    {67, {1, 3, 3, 9, 7, 49, 0}},
    {91, {1, 1, 1, 15, 21, 21, 0}},
    {97, {1, 3, 1, 13, 27, 49, 0}},
    {103, {1, 1, 1, 15, 7, 5, 0}},
    {109, {1, 3, 1, 15, 13, 25, 0}},
    {115, {1, 1, 5, 5, 19, 61, 0}},
    {131, {1, 3, 7, 11, 23, 15, 103}},
    {137, {1, 3, 7, 13, 13, 15, 69}},
}};

inline constexpr int kSobolBits = 32;

inline std::array<std::uint32_t, kSobolBits> direction_numbers(std::size_t d) {
  std::array<std::uint32_t, kSobolBits> v{};
  if (d == 0) {
    for (int j = 0; j < kSobolBits; ++j) v[j] = 1u << (kSobolBits - 1 - j);
    return v;
  }
  const auto& row = kSobolTable[d];
  int s = 0;
  while ((row.poly >> (s + 1)) != 0) ++s;
  const std::uint32_t a = (row.poly - (1u << s) - 1u) >> 1;
  for (int j = 0; j < s && j < kSobolBits; ++j) v[j] = row.m[j] << (kSobolBits - 1 - j);
  for (int j = s; j < kSobolBits; ++j) {
    v[j] = v[j - s] ^ (v[j - s] >> s);
    for (int k = 1; k < s; ++k)
      if ((a >> (s - 1 - k)) & 1u) v[j] ^= v[j - k];
  }
  return v;
}

}  // namespace detail

inline constexpr std::size_t kMaxSobolDim = detail::kSobolTable.size();

/// Unscrambled Sobol points in Gray-code order, starting at index `skip`.
/// Returns n rows of `dim` coordinates in [0, 1).
inline std::vector<std::vector<double>> sobol_points(std::size_t dim, std::size_t n, std::size_t skip = 1) {
  if (dim == 0 || dim > kMaxSobolDim)
    throw UnsupportedDimensionError("sobol: dimension " + std::to_string(dim) + " not in [1, " +
                                    std::to_string(kMaxSobolDim) + "]");
  if (n == 0) throw ConfigError("sobol: n must be at least 1");
  if (skip + n > (std::size_t{1} << detail::kSobolBits)) throw ConfigError("sobol: too many points requested");

  std::vector<std::array<std::uint32_t, detail::kSobolBits>> dirs(dim);
  for (std::size_t d = 0; d < dim; ++d) dirs[d] = detail::direction_numbers(d);

  std::vector<std::uint32_t> x(dim, 0);
  const std::uint64_t gray = skip ^ (skip >> 1);
  for (std::size_t d = 0; d < dim; ++d)
    for (int j = 0; j < detail::kSobolBits; ++j)
      if ((gray >> j) & 1u) x[d] ^= dirs[d][j];

  constexpr double scale = 1.0 / 4294967296.0;
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) out[i][d] = static_cast<double>(x[d]) * scale;
    // Advance: flip the direction number at the lowest zero bit of the index.
    std::uint64_t idx = skip + i;
    int c = 0;
    while (idx & 1u) {
      idx >>= 1;
      ++c;
    }
    for (std::size_t d = 0; d < dim; ++d) x[d] ^= dirs[d][c];
  }
  return out;
}

}  // namespace fixfit
