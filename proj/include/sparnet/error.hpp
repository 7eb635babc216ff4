#pragma once

#include <stdexcept>
#include <string>

namespace sparnet {

// Caller broke a documented precondition (shape, range, channel count).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A model/data configuration that cannot be built.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SPARNET_REQUIRE(cond, msg)                 \
  do {                                             \
    if (!(cond)) throw ::sparnet::ContractError(msg); \
  } while (0)

}  // namespace sparnet
