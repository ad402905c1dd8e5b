#pragma once

#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>

namespace dpcl {

inline constexpr std::int64_t kIgnoreLabel = 255;
inline constexpr double kStyleEps = 1e-5;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Warnings go to stderr unless silenced (tests silence them).
void warn(const std::string& msg);
void set_warnings_enabled(bool enabled);

}  // namespace dpcl
