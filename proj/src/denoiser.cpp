#include "flowlab/denoiser.hpp"

namespace flowlab {

std::string to_string(PredTarget target) { return target == PredTarget::kZ0 ? "Z0" : "VELOCITY"; }

PredTarget parse_pred_target(const std::string& name) {
  if (name == "Z0") return PredTarget::kZ0;
  if (name == "VELOCITY") return PredTarget::kVelocity;
  throw std::invalid_argument("unknown prediction target '" + name + "' (expected Z0 or VELOCITY)");
}

}  // namespace flowlab
