#include "flowlab/model.hpp"

namespace flowlab {

std::vector<Matrix<float>*> LanguageModel::trainables() {
  std::vector<Matrix<float>*> out;
  for (auto& a : net.arrays) out.push_back(&a.value);
  out.push_back(&embedding.weights);
  return out;
}

std::vector<const Matrix<float>*> LanguageModel::trainables() const {
  std::vector<const Matrix<float>*> out;
  for (const auto& a : net.arrays) out.push_back(&a.value);
  out.push_back(&embedding.weights);
  return out;
}

Predictor make_predictor(const DenoiserParams<float>& net) {
  return {net.target, [&net](const Matrix<float>& z_in, Index src_len, double t_input) {
            return extract_target(denoiser_predict(net, z_in, t_input), src_len);
          }};
}

}  // namespace flowlab
