#include "deft/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "deft/hungarian.hpp"

namespace deft::metrics {

double match_similarity(const Box& gt, const Box& hyp, const EvalOptions& options) {
  if (options.criterion == MatchCriterion::kIou) {
    const double v = iou(gt, hyp);
    return (v > 0.0 && v >= options.iou_threshold) ? v : -1.0;
  }
  const double d = center_distance(gt, hyp);
  return d <= options.max_distance ? 1.0 - d / options.max_distance : -1.0;
}

namespace {

int total_boxes(const Sequence& seq) {
  int n = 0;
  for (const auto& [frame, boxes] : seq) n += static_cast<int>(boxes.size());
  return n;
}

// Identity-level true positives of the best one-to-one mapping.
int best_idtp(const Sequence& gt, const Sequence& hyp, const EvalOptions& options) {
  std::map<int, int> gt_index, hyp_index;
  for (const auto& [f, boxes] : gt) for (const auto& b : boxes) gt_index.emplace(b.id, 0);
  for (const auto& [f, boxes] : hyp) for (const auto& b : boxes) hyp_index.emplace(b.id, 0);
  if (gt_index.empty() || hyp_index.empty()) return 0;
  int k = 0;
  for (auto& [id, idx] : gt_index) idx = k++;
  k = 0;
  for (auto& [id, idx] : hyp_index) idx = k++;

  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(gt_index.size()),
                                                 static_cast<Eigen::Index>(hyp_index.size()));
  for (const auto& [frame, gboxes] : gt) {
    const auto it = hyp.find(frame);
    if (it == hyp.end()) continue;
    for (const auto& g : gboxes) {
      for (const auto& h : it->second) {
        if (match_similarity(g.box, h.box, options) >= 0.0) {
          counts(gt_index[g.id], hyp_index[h.id]) += 1.0;
        }
      }
    }
  }
  const auto solved = hungarian(counts, /*maximize=*/true);
  return static_cast<int>(std::lround(solved.total));
}

}  // namespace

SequenceEval clear_mot(const Sequence& gt, const Sequence& hyp, const EvalOptions& options) {
  SequenceEval ev;
  ev.gt_count = total_boxes(gt);
  ev.hyp_count = total_boxes(hyp);
  if (ev.gt_count == 0) throw std::invalid_argument("clear_mot: empty ground truth");

  std::set<int> frames;
  for (const auto& [f, b] : gt) frames.insert(f);
  for (const auto& [f, b] : hyp) frames.insert(f);

  std::map<int, int> last_match;                 // gt id -> hyp id
  std::map<int, std::pair<int, int>> coverage;   // gt id -> (present, matched)
  double sim_sum = 0.0;
  const std::vector<TrackedBox> none;

  for (int frame : frames) {
    const auto git = gt.find(frame);
    const auto hit = hyp.find(frame);
    const auto& g = git == gt.end() ? none : git->second;
    const auto& h = hit == hyp.end() ? none : hit->second;
    FrameLog log;
    log.frame = frame;
    std::vector<int> g_to_h(g.size(), -1);
    std::vector<char> h_used(h.size(), 0);

    for (std::size_t gi = 0; gi < g.size(); ++gi) {
      const auto lm = last_match.find(g[gi].id);
      if (lm == last_match.end()) continue;
      for (std::size_t hi = 0; hi < h.size(); ++hi) {
        if (h_used[hi] || h[hi].id != lm->second) continue;
        if (match_similarity(g[gi].box, h[hi].box, options) >= 0.0) {
          g_to_h[gi] = static_cast<int>(hi);
          h_used[hi] = 1;
        }
        break;
      }
    }

    std::vector<int> free_g, free_h;
    for (std::size_t gi = 0; gi < g.size(); ++gi) if (g_to_h[gi] < 0) free_g.push_back(static_cast<int>(gi));
    for (std::size_t hi = 0; hi < h.size(); ++hi) if (!h_used[hi]) free_h.push_back(static_cast<int>(hi));
    if (!free_g.empty() && !free_h.empty()) {
      // A bonus per valid pair makes cardinality dominate total similarity.
      const double bonus = static_cast<double>(std::min(free_g.size(), free_h.size())) + 1.0;
      Eigen::MatrixXd s(static_cast<Eigen::Index>(free_g.size()),
                        static_cast<Eigen::Index>(free_h.size()));
      for (std::size_t a = 0; a < free_g.size(); ++a) {
        for (std::size_t b = 0; b < free_h.size(); ++b) {
          const double sim = match_similarity(g[free_g[a]].box, h[free_h[b]].box, options);
          s(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
              sim >= 0.0 ? bonus + sim : kForbidden;
        }
      }
      const auto solved = hungarian(s, /*maximize=*/true);
      for (std::size_t a = 0; a < free_g.size(); ++a) {
        const int b = solved.row_to_col[a];
        if (b < 0) continue;
        const int gi = free_g[a];
        const int hi = free_h[b];
        g_to_h[gi] = hi;
        h_used[hi] = 1;
        const auto lm = last_match.find(g[gi].id);
        if (lm != last_match.end() && lm->second != h[hi].id) ++log.ids;
      }
    }

    int matched = 0;
    for (std::size_t gi = 0; gi < g.size(); ++gi) {
      auto& cov = coverage[g[gi].id];
      ++cov.first;
      if (g_to_h[gi] < 0) continue;
      const auto& hb = h[g_to_h[gi]];
      ++cov.second;
      ++matched;
      sim_sum += match_similarity(g[gi].box, hb.box, options);
      last_match[g[gi].id] = hb.id;
      log.matches.emplace_back(g[gi].id, hb.id);
    }
    log.fp = static_cast<int>(h.size()) - matched;
    log.fn = static_cast<int>(g.size()) - matched;
    ev.fp += log.fp;
    ev.fn += log.fn;
    ev.ids += log.ids;
    ev.matches += matched;
    ev.log.push_back(std::move(log));
  }

  ev.mota = 1.0 - static_cast<double>(ev.fp + ev.fn + ev.ids) / ev.gt_count;
  ev.motp = ev.matches > 0 ? sim_sum / ev.matches : 0.0;
  ev.gt_tracks = static_cast<int>(coverage.size());
  int mostly_tracked = 0, mostly_lost = 0;
  for (const auto& [id, cov] : coverage) {
    const double ratio = static_cast<double>(cov.second) / cov.first;
    if (ratio >= 0.8) ++mostly_tracked;
    if (ratio <= 0.2) ++mostly_lost;
  }
  ev.mt = static_cast<double>(mostly_tracked) / ev.gt_tracks;
  ev.ml = static_cast<double>(mostly_lost) / ev.gt_tracks;
  ev.idtp = best_idtp(gt, hyp, options);
  ev.idf1 = 2.0 * ev.idtp / static_cast<double>(ev.gt_count + ev.hyp_count);
  return ev;
}

double idf1(const Sequence& gt, const Sequence& hyp, const EvalOptions& options) {
  const int n_gt = total_boxes(gt);
  if (n_gt == 0) throw std::invalid_argument("idf1: empty ground truth");
  const int n_hyp = total_boxes(hyp);
  return 2.0 * best_idtp(gt, hyp, options) / static_cast<double>(n_gt + n_hyp);
}

SequenceEval combine(const std::vector<SequenceEval>& evals) {
  SequenceEval out;
  double motp_sum = 0.0, mt_sum = 0.0, ml_sum = 0.0;
  for (const auto& e : evals) {
    out.fp += e.fp;
    out.fn += e.fn;
    out.ids += e.ids;
    out.gt_count += e.gt_count;
    out.hyp_count += e.hyp_count;
    out.matches += e.matches;
    out.idtp += e.idtp;
    out.gt_tracks += e.gt_tracks;
    motp_sum += e.motp * e.matches;
    mt_sum += e.mt * e.gt_tracks;
    ml_sum += e.ml * e.gt_tracks;
  }
  if (out.gt_count == 0) throw std::invalid_argument("combine: empty ground truth");
  out.mota = 1.0 - static_cast<double>(out.fp + out.fn + out.ids) / out.gt_count;
  out.motp = out.matches > 0 ? motp_sum / out.matches : 0.0;
  out.mt = out.gt_tracks > 0 ? mt_sum / out.gt_tracks : 0.0;
  out.ml = out.gt_tracks > 0 ? ml_sum / out.gt_tracks : 0.0;
  out.idf1 = 2.0 * out.idtp / static_cast<double>(out.gt_count + out.hyp_count);
  return out;
}

std::string to_json(const SequenceEval& e) {
  nlohmann::json j = {{"MOTA", e.mota},   {"MOTP", e.motp},         {"IDF1", e.idf1},
                      {"FP", e.fp},       {"FN", e.fn},             {"IDS", e.ids},
                      {"MT", e.mt},       {"ML", e.ml},             {"GT", e.gt_count},
                      {"HYP", e.hyp_count}, {"matches", e.matches}, {"gt_tracks", e.gt_tracks}};
  return j.dump(2);
}

std::string to_table(const std::vector<std::pair<std::string, SequenceEval>>& rows) {
  std::size_t name_w = 8;
  for (const auto& [name, e] : rows) name_w = std::max(name_w, name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "name" << std::right;
  for (const char* h : {"MOTA", "MOTP", "IDF1", "MT", "ML"}) os << std::setw(9) << h;
  for (const char* h : {"FP", "FN", "IDS", "GT"}) os << std::setw(8) << h;
  os << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& [name, e] : rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << name << std::right;
    for (double v : {e.mota, e.motp, e.idf1, e.mt, e.ml}) os << std::setw(9) << v;
    for (int v : {e.fp, e.fn, e.ids, e.gt_count}) os << std::setw(8) << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace deft::metrics
