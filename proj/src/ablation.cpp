#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "deft/simulator.hpp"

namespace deft::sim {

metrics::Sequence run_tracker(const Scenario& scenario, const TrackerConfig& config,
                              const MatcherParams* matcher, const LstmParams* lstm) {
  Tracker tracker(config, matcher, lstm);
  metrics::Sequence out;
  for (int f = 1; f <= scenario.n_frames(); ++f) {
    const auto result = tracker.step(f, scenario.frames[f - 1]);
    auto& boxes = out[f];
    for (const auto& o : result.outputs) boxes.push_back({o.track_id, o.box});
  }
  return out;
}

namespace {

metrics::EvalOptions eval_options(Mode mode) {
  metrics::EvalOptions opts;
  if (mode == Mode::k3D) opts.criterion = metrics::MatchCriterion::kCenterDistance;
  return opts;
}

}  // namespace

metrics::SequenceEval evaluate(const Scenario& scenario, const TrackerConfig& config,
                               const MatcherParams* matcher, const LstmParams* lstm) {
  const auto hyp = run_tracker(scenario, config, matcher, lstm);
  return metrics::clear_mot(ground_truth(scenario), hyp, eval_options(scenario.config.mode));
}

std::string Variant::name() const {
  std::string s;
  switch (embedding) {
    case EmbeddingVariant::kNone: s = "emb:none"; break;
    case EmbeddingVariant::kSingleScale: s = "emb:single"; break;
    case EmbeddingVariant::kMultiScale: s = "emb:multi"; break;
  }
  s += " motion:";
  s += to_string(motion);
  s += iou_stage ? " iou:on" : " iou:off";
  return s;
}

std::vector<Variant> ablation_variants() {
  return {
      {EmbeddingVariant::kNone, MotionModelKind::kLstm, true},
      {EmbeddingVariant::kSingleScale, MotionModelKind::kNone, false},
      {EmbeddingVariant::kMultiScale, MotionModelKind::kNone, false},
      {EmbeddingVariant::kMultiScale, MotionModelKind::kKalman, false},
      {EmbeddingVariant::kMultiScale, MotionModelKind::kLstm, false},
      {EmbeddingVariant::kMultiScale, MotionModelKind::kLstm, true},
  };
}

AblationRow run_variant(std::span<const Scenario> scenarios, const Variant& variant,
                        const TrackerConfig& base, const ModelBank& models) {
  TrackerConfig cfg = base;
  cfg.motion_model = variant.motion;
  cfg.iou_second_stage = variant.iou_stage;
  cfg.use_embeddings = variant.embedding != EmbeddingVariant::kNone;
  const MatcherParams* matcher = nullptr;
  if (variant.embedding == EmbeddingVariant::kSingleScale) matcher = models.reduced;
  if (variant.embedding == EmbeddingVariant::kMultiScale) matcher = models.full;
  if (cfg.use_embeddings) {
    if (matcher == nullptr) throw std::invalid_argument("run_variant: missing matcher for " + variant.name());
    cfg.embedding_dim = matcher->embedding_dim();
  }
  const LstmParams* lstm = variant.motion == MotionModelKind::kLstm ? models.lstm : nullptr;

  std::vector<metrics::SequenceEval> evals;
  for (const auto& sc : scenarios) {
    const bool truncate = variant.embedding == EmbeddingVariant::kSingleScale &&
                          sc.config.embedding.dim != cfg.embedding_dim;
    const Scenario& used = truncate ? truncate_embeddings(sc, cfg.embedding_dim) : sc;
    evals.push_back(evaluate(used, cfg, matcher, lstm));
  }
  return {variant, metrics::combine(evals)};
}

std::vector<AblationRow> ablation_run(std::span<const Scenario> scenarios,
                                      std::span<const Variant> variants,
                                      const TrackerConfig& base, const ModelBank& models) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) rows.push_back(run_variant(scenarios, v, base, models));
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(36) << "variant" << std::right << std::setw(9) << "MOTA"
     << std::setw(9) << "MT" << std::setw(9) << "ML" << std::setw(8) << "IDS" << std::setw(9)
     << "IDS%" << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    const double ids_pct = r.eval.gt_count > 0 ? 100.0 * r.eval.ids / r.eval.gt_count : 0.0;
    os << std::left << std::setw(36) << r.variant.name() << std::right << std::setw(9)
       << r.eval.mota << std::setw(9) << r.eval.mt << std::setw(9) << r.eval.ml << std::setw(8)
       << r.eval.ids << std::setw(9) << ids_pct << '\n';
  }
  return os.str();
}

}  // namespace deft::sim
