#pragma once

#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixfit/errors.hpp"

namespace fixfit {

struct ParamSpec {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  bool fixed = false;
};

/// Ordered named parameters. Only free parameters take part in sampling and
/// in the affine map to the unit hypercube.
class ParamSpace {
 public:
  ParamSpace() = default;
  explicit ParamSpace(std::vector<ParamSpec> specs) : specs_(std::move(specs)) { validate(); }

  const std::vector<ParamSpec>& specs() const noexcept { return specs_; }

  std::vector<ParamSpec> free_specs() const {
    std::vector<ParamSpec> out;
    for (const auto& s : specs_)
      if (!s.fixed) out.push_back(s);
    return out;
  }

  std::size_t dimension() const noexcept {
    std::size_t n = 0;
    for (const auto& s : specs_) n += s.fixed ? 0 : 1;
    return n;
  }

  std::vector<std::string> free_names() const {
    std::vector<std::string> out;
    for (const auto& s : specs_)
      if (!s.fixed) out.push_back(s.name);
    return out;
  }

  /// Unit-cube point to native values of the free parameters.
  std::vector<double> to_native(const std::vector<double>& unit) const {
    const auto free = free_specs();
    if (unit.size() != free.size()) throw ShapeError("param space: point has wrong dimension");
    std::vector<double> out(unit.size());
    for (std::size_t i = 0; i < unit.size(); ++i) {
      if (!(unit[i] >= 0.0 && unit[i] <= 1.0))
        throw RangeError("param space: coordinate " + std::to_string(i) + " outside [0, 1]");
      out[i] = free[i].lower + unit[i] * (free[i].upper - free[i].lower);
    }
    return out;
  }

  std::vector<double> to_unit(const std::vector<double>& native) const {
    const auto free = free_specs();
    if (native.size() != free.size()) throw ShapeError("param space: point has wrong dimension");
    std::vector<double> out(native.size());
    for (std::size_t i = 0; i < native.size(); ++i) {
      out[i] = (native[i] - free[i].lower) / (free[i].upper - free[i].lower);
      if (!(out[i] >= -1e-12 && out[i] <= 1.0 + 1e-12))
        throw RangeError("param space: '" + free[i].name + "' outside its bounds");
    }
    return out;
  }

 private:
  void validate() const {
    std::set<std::string> names;
    for (const auto& s : specs_) {
      if (!names.insert(s.name).second) throw ConfigError("param space: duplicate name '" + s.name + "'");
      if (!s.fixed && !(s.lower < s.upper)) throw ConfigError("param space: '" + s.name + "' needs lower < upper");
    }
  }

  std::vector<ParamSpec> specs_;
};

inline void to_json(nlohmann::json& j, const ParamSpec& s) {
  j = {{"name", s.name}, {"lower", s.lower}, {"upper", s.upper}, {"fixed", s.fixed}};
}

inline void from_json(const nlohmann::json& j, ParamSpec& s) {
  s.name = j.at("name").get<std::string>();
  s.lower = j.at("lower").get<double>();
  s.upper = j.at("upper").get<double>();
  s.fixed = j.value("fixed", false);
}

}  // namespace fixfit
