#include "hepa/labelcurve.hpp"

#include "hepa/errors.hpp"

namespace hepa {

LabelCurve run_label_curve(const Dataset& data, const DatasetSpec& spec, const NetworkConfig& net,
                           const PretrainConfig& pretrain_cfg, const FinetuneConfig& finetune_cfg,
                           const std::vector<std::uint64_t>& seeds, const std::vector<double>& fractions,
                           const HepaModel* pretrained, const std::function<void(const LabelCurvePoint&)>& on_point) {
  if (seeds.empty() || fractions.empty()) throw ConfigError("labelcurve: seeds and fractions must be non-empty");
  LabelCurve curve;
  for (const auto seed : seeds) {
    HepaModel model;
    if (pretrained) {
      model = pretrained->clone();
    } else {
      PretrainConfig pc = pretrain_cfg;
      pc.seed = seed;
      model = pretrain(data, spec, net, pc).model;
    }
    for (const double f : fractions) {
      FinetuneConfig fc = finetune_cfg;
      fc.seed = seed;
      fc.label_fraction = f;
      LabelCurvePoint pt{f, seed, 0, std::nullopt, std::nullopt};
      try {
        FinetuneResult r = predictor_finetune(data, spec, model, fc);
        pt.labeled_episodes = r.labeled_episodes;
        pt.h_auroc = r.report.h_auroc;
        pt.rmse = r.report.rmse;
      } catch (const ConfigError&) {
        // a tiny subset can be label-free; the point is recorded as absent
      }
      curve.points.push_back(pt);
      if (on_point) on_point(pt);
    }
  }
  std::optional<double> full;
  for (const double f : fractions) {
    LabelCurveSummary s{f, std::nullopt, std::nullopt, 0};
    double sum = 0;
    for (const auto& p : curve.points) {
      if (p.fraction == f && p.h_auroc) {
        sum += *p.h_auroc;
        ++s.n_seeds;
      }
    }
    if (s.n_seeds) s.h_auroc = sum / s.n_seeds;
    if (f == 1.0) full = s.h_auroc;
    curve.summary.push_back(s);
  }
  if (full) {
    for (auto& s : curve.summary) {
      if (s.h_auroc) s.retention = *s.h_auroc / *full;
    }
  }
  return curve;
}

}  // namespace hepa
