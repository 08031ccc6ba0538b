#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "prunemia/mask.hpp"
#include "prunemia/train.hpp"

namespace prunemia::prune {

// Pruned-and-fine-tuned model with its mask; masked entries are exactly zero.
struct PrunedModel {
  MlpModel model;
  Mask mask;
  PruneMethod method = PruneMethod::L1Unstructured;
  double gamma = 0.0;
  train::TrainReport fine_tune_report;

  bool mask_respected() const {
    auto ok = [](const std::vector<Tensor>& ts, const std::vector<Tensor>& ms) {
      for (std::size_t i = 0; i < ts.size(); ++i)
        for (std::int64_t j = 0; j < ts[i].numel(); ++j)
          if (ms[i][j] == 0.0 && ts[i][j] != 0.0) return false;
      return true;
    };
    return ok(model.weights, mask.weights) && ok(model.biases, mask.biases) &&
           ok(model.scales, mask.scales);
  }
};

// Fine-tunes the masked model; the mask is re-applied after every optimizer
// step so removed entries stay exactly zero across all epochs.
inline train::TrainReport fine_tune(PrunedModel& pruned, const data::Dataset& ds,
                                    const std::vector<int>& train_idx,
                                    const std::vector<int>& val_idx, const train::TrainConfig& cfg,
                                    const defense::DefenseConfig& def) {
  pruned.fine_tune_report = train::train_mlp(pruned.model, ds, train_idx, val_idx, cfg, def,
                                             &pruned.mask);
  return pruned.fine_tune_report;
}

// compute_mask -> apply_mask -> fine_tune.
inline PrunedModel prune_pipeline(const MlpModel& original, PruneMethod method, double gamma,
                                  const data::Dataset& ds, const std::vector<int>& train_idx,
                                  const std::vector<int>& val_idx, const train::TrainConfig& cfg,
                                  const defense::DefenseConfig& def) {
  PrunedModel out;
  out.method = method;
  out.gamma = gamma;
  out.mask = compute_mask(original, method, gamma);
  out.model = apply_mask(original, out.mask);
  fine_tune(out, ds, train_idx, val_idx, cfg, def);
  return out;
}

}  // namespace prunemia::prune
