#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace usseg {

// Fault injection used by `check --sabotage` to prove the checks can fail.
enum class Fault { none, conv_grad, sigmoid_grad, nms_order, ap_interp };

inline Fault& active_fault() {
  static Fault f = Fault::none;
  return f;
}

inline bool fault_active(Fault f) { return active_fault() == f; }

inline std::optional<Fault> parse_fault(std::string_view name) {
  if (name == "none") return Fault::none;
  if (name == "conv-grad") return Fault::conv_grad;
  if (name == "sigmoid-grad") return Fault::sigmoid_grad;
  if (name == "nms-order") return Fault::nms_order;
  if (name == "ap-interp") return Fault::ap_interp;
  return std::nullopt;
}

// Restores the previous fault on scope exit.
class ScopedFault {
 public:
  explicit ScopedFault(Fault f) : prev_(active_fault()) { active_fault() = f; }
  ~ScopedFault() { active_fault() = prev_; }
  ScopedFault(const ScopedFault&) = delete;
  ScopedFault& operator=(const ScopedFault&) = delete;

 private:
  Fault prev_;
};

}  // namespace usseg
