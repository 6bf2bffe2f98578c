#pragma once

#include <functional>
#include <string>
#include <vector>

#include "projsdpa/model/transformer.hpp"
#include "projsdpa/numerics/finite_difference.hpp"
#include "projsdpa/pipeline/loss.hpp"

namespace projsdpa::pipeline {

struct ParameterAudit {
  std::string name;
  std::size_t entries = 0;
  double rel_error = 0.0;
};

struct GradientAudit {
  attention::Variant variant = attention::Variant::Projection;
  std::vector<ParameterAudit> parameters;
  double max_rel_error = 0.0;

  bool passed(double threshold) const { return max_rel_error < threshold; }
};

// Called between the analytic backward pass and the comparison; lets tests
// corrupt gradients to confirm the audit catches it.
using GradientTamper = std::function<void(model::TransformerParams&)>;

/// Compares backpropagated gradients of the teacher-forced cross-entropy on
/// one random sequence pair against central differences for every parameter
/// entry of a freshly initialized model.
inline GradientAudit audit_gradients(const model::ModelConfig& cfg, std::uint64_t seed,
                                     double h = 1e-5, const GradientTamper& tamper = {}) {
  cfg.validate();
  const model::Transformer net(cfg);
  auto params = model::TransformerParams::init(cfg);

  Rng rng(seed);
  auto draw = [&](std::size_t vocab) {
    std::vector<TokenId> ids(cfg.max_len);
    for (auto& id : ids)
      id = static_cast<TokenId>(model::kNumReserved + rng.below(vocab - model::kNumReserved));
    return ids;
  };
  if (cfg.src_vocab <= model::kNumReserved || cfg.tgt_vocab <= model::kNumReserved)
    throw ConfigError("gradient audit needs at least one non-reserved token");
  const auto src = draw(cfg.src_vocab);
  auto tgt_in = draw(cfg.tgt_vocab);
  tgt_in[0] = model::kStartId;
  const auto tgt_out = draw(cfg.tgt_vocab);

  model::ForwardCache cache;
  const auto loss = cross_entropy_loss(net.forward(src, tgt_in, params, &cache), tgt_out);
  params.zero_grads();
  net.backward(cache, params, loss.grad);
  if (tamper) tamper(params);

  GradientAudit report;
  report.variant = cfg.variant;
  model::TransformerParams probe = params;
  probe.for_each([&](const std::string& name, Parameter& prm) {
    const Tensor fd = finite_difference_grad(
        [&](const Tensor& t) {
          const Tensor saved = prm.value;
          prm.value = t;
          const double val = cross_entropy_loss(net.forward(src, tgt_in, probe), tgt_out).loss;
          prm.value = saved;
          return val;
        },
        prm.value, h);
    const double err = relative_error(prm.grad, fd);
    report.parameters.push_back({name, prm.value.size(), err});
    report.max_rel_error = std::max(report.max_rel_error, err);
  });
  return report;
}

}  // namespace projsdpa::pipeline
