#pragma once

#include <stdexcept>
#include <string>

namespace wsidg {

// Base for every precondition failure raised by the library.
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// A WSI without non-tumor patches has no BoVW vector.
class UngroupableWsi : public InvalidInput {
 public:
  explicit UngroupableWsi(const std::string& wsi_id)
      : InvalidInput("ungroupable WSI '" + wsi_id + "': no non-tumor patches"), wsi_id_(wsi_id) {}
  const std::string& wsi_id() const { return wsi_id_; }

 private:
  std::string wsi_id_;
};

class DegeneratePrototype : public InvalidInput {
 public:
  DegeneratePrototype(const std::string& wsi_id, int label)
      : InvalidInput("degenerate prototype for (" + wsi_id + ", class " + std::to_string(label) +
                     "): member mean is zero") {}
};

class SamplingInfeasible : public std::runtime_error {
 public:
  explicit SamplingInfeasible(const std::string& what) : std::runtime_error(what) {}
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, std::string replay_path)
      : std::runtime_error(what), replay_path_(std::move(replay_path)) {}
  const std::string& replay_path() const { return replay_path_; }

 private:
  std::string replay_path_;
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace wsidg
