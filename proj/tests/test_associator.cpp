#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "deft/associator.hpp"
#include "deft/hungarian.hpp"
#include "deft/simulator.hpp"
#include "test_util.hpp"

namespace deft {
namespace {

using testing::make_detection;
using testing::random_matrix;

Track track_with_frames(int id, std::initializer_list<int> frames) {
  Track t;
  t.id = id;
  for (int f : frames) t.memory.push_back({f, BBox2D{}, Eigen::VectorXd::Zero(2)});
  return t;
}

AffinityCache::Entry entry_for(int track_id, const Eigen::MatrixXd& bwd, const Eigen::MatrixXd& fwd) {
  AffinityCache::Entry e;
  e.pair.bwd = bwd;
  e.pair.fwd = fwd;
  e.column_of_track[track_id] = 0;
  return e;
}

TEST(TrackSimilarity, SingleObservation) {
  const auto t = track_with_frames(1, {3});
  AffinityCache cache;
  Eigen::MatrixXd p(1, 2);
  p << 0.8, 0.2;
  cache.insert(3, entry_for(1, p, p));
  EXPECT_NEAR(track_similarity(0, t, cache), 0.8, 1e-15);
}

TEST(TrackSimilarity, TwoObservationsAveraged) {
  const auto t = track_with_frames(1, {2, 5});
  AffinityCache cache;
  Eigen::MatrixXd b1(1, 2), f1(1, 2), b2(1, 2), f2(1, 2);
  b1 << 0.5, 0.5;
  f1 << 0.7, 0.3;  // pair mean 0.6
  b2 << 1.0, 0.0;
  f2 << 1.0, 0.0;  // pair mean 1.0
  cache.insert(2, entry_for(1, b1, f1));
  cache.insert(5, entry_for(1, b2, f2));
  EXPECT_NEAR(track_similarity(0, t, cache), 0.8, 1e-15);
}

TEST(TrackSimilarity, MissingFrameThrows) {
  const auto t = track_with_frames(1, {2});
  AffinityCache cache;
  EXPECT_THROW(track_similarity(0, t, cache), std::out_of_range);
}

TEST(TrackSimilarity, MatchesBruteForceResummation) {
  std::mt19937_64 rng(17);
  const int e = 4;
  const std::vector<int> hidden{8, 6, 4};
  const auto params = init_matcher(e, hidden, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Track> tracks(3);
    for (int j = 0; j < 3; ++j) {
      tracks[j].id = j + 1;
      for (int f = 1; f <= 6; ++f) {
        if (rng() % 2 == 0 || (f == 6 && tracks[j].memory.empty())) {
          tracks[j].memory.push_back({f, BBox2D{}, random_matrix(e, 1, rng)});
        }
      }
    }
    const auto emb_t = random_matrix(4, e, rng);
    std::vector<const Track*> ptrs{&tracks[0], &tracks[1], &tracks[2]};
    const auto cache = AffinityCache::build(emb_t, ptrs, params, 10.0);

    // Oracle: re-run the matcher per remembered frame with rows in track order.
    for (int j = 0; j < 3; ++j) {
      for (int i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (const auto& obs : tracks[j].memory) {
          std::vector<Eigen::VectorXd> rows;
          int mine = -1;
          for (const auto& other : tracks) {
            for (const auto& o : other.memory) {
              if (o.frame != obs.frame) continue;
              if (other.id == tracks[j].id) mine = static_cast<int>(rows.size());
              rows.push_back(o.embedding);
            }
          }
          Eigen::MatrixXd past(static_cast<Eigen::Index>(rows.size()), e);
          for (std::size_t r = 0; r < rows.size(); ++r) past.row(r) = rows[r].transpose();
          const auto out = matcher_forward(emb_t, past, params, 10.0);
          sum += 0.5 * (out.fwd(mine, i) + out.bwd(i, mine));
        }
        EXPECT_NEAR(track_similarity(i, tracks[j], cache), sum / tracks[j].memory.size(), 1e-12);
      }
    }
  }
}

TEST(TrackSimilarityProperty, AddingObservationMovesMeanTowardItsScore) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Track t;
    t.id = 1;
    AffinityCache cache;
    const int n = 1 + static_cast<int>(rng() % 5);
    for (int f = 1; f <= n + 1; ++f) {
      const double s = u(rng);
      Eigen::MatrixXd p(1, 2);
      p << s, 1.0 - s;
      cache.insert(f, entry_for(1, p, p));
    }
    for (int f = 1; f <= n; ++f) t.memory.push_back({f, BBox2D{}, Eigen::VectorXd::Zero(1)});
    const double before = track_similarity(0, t, cache);
    const double s_new = cache.at(n + 1).pair.bwd(0, 0);
    t.memory.push_back({n + 1, BBox2D{}, Eigen::VectorXd::Zero(1)});
    const double after = track_similarity(0, t, cache);
    EXPECT_LE(std::abs(after - s_new), std::abs(before - s_new) + 1e-15);
    EXPECT_GE(after, std::min(before, s_new) - 1e-15);
    EXPECT_LE(after, std::max(before, s_new) + 1e-15);
  }
}

TEST(AssociationMatrix, EmptyTrackSet) {
  AffinityCache cache;
  const auto d = build_association_matrix({}, 3, cache);
  EXPECT_EQ(d.rows(), 0);
  EXPECT_EQ(d.cols(), 3);
}

TEST(AssociationMatrix, OneTrackOneDetection) {
  const auto t = track_with_frames(1, {1});
  AffinityCache cache;
  Eigen::MatrixXd b(1, 2), f(1, 2);
  b << 0.6, 0.4;
  f << 0.8, 0.2;
  cache.insert(1, entry_for(1, b, f));
  const Track* ptrs[] = {&t};
  const auto d = build_association_matrix(ptrs, 1, cache);
  ASSERT_EQ(d.rows(), 1);
  ASSERT_EQ(d.cols(), 2);
  EXPECT_NEAR(d(0, 0), 0.7, 1e-15);
  EXPECT_NEAR(d(0, 1), 0.2, 1e-15);
}

TEST(AssociationMatrix, TwoTracksTwoDetectionsByHand) {
  // Track 1 seen at frames 1 and 2, track 2 only at frame 2.
  const auto t1 = track_with_frames(1, {1, 2});
  const auto t2 = track_with_frames(2, {2});
  AffinityCache cache;
  {
    AffinityCache::Entry e;
    e.pair.bwd.resize(2, 2);
    e.pair.bwd << 0.9, 0.1, 0.2, 0.8;  // current dets vs {t1}
    e.pair.fwd.resize(1, 3);
    e.pair.fwd << 0.7, 0.2, 0.1;  // t1 vs current dets
    e.column_of_track = {{1, 0}};
    cache.insert(1, e);
  }
  {
    AffinityCache::Entry e;
    e.pair.bwd.resize(2, 3);
    e.pair.bwd << 0.5, 0.3, 0.2, 0.1, 0.6, 0.3;  // dets vs {t2, t1}
    e.pair.fwd.resize(2, 3);
    e.pair.fwd << 0.2, 0.7, 0.1,   // t2
        0.6, 0.1, 0.3;             // t1
    e.column_of_track = {{2, 0}, {1, 1}};
    cache.insert(2, e);
  }
  const Track* ptrs[] = {&t1, &t2};
  const auto d = build_association_matrix(ptrs, 2, cache);
  ASSERT_EQ(d.rows(), 2);
  ASSERT_EQ(d.cols(), 4);
  // S[0,0] = ((0.7+0.9)/2 + (0.6+0.3)/2) / 2
  EXPECT_NEAR(d(0, 0), (0.8 + 0.45) / 2, 1e-15);
  // S[0,1] = ((0.2+0.2)/2 + (0.1+0.6)/2) / 2
  EXPECT_NEAR(d(0, 1), (0.2 + 0.35) / 2, 1e-15);
  EXPECT_NEAR(d(1, 0), (0.2 + 0.5) / 2, 1e-15);
  EXPECT_NEAR(d(1, 1), (0.7 + 0.1) / 2, 1e-15);
  EXPECT_NEAR(d(0, 2), (0.1 + 0.3) / 2, 1e-15);
  EXPECT_NEAR(d(1, 3), 0.1, 1e-15);
  EXPECT_EQ(d(0, 3), kForbidden);
  EXPECT_EQ(d(1, 2), kForbidden);
}

TrackerConfig plain_config(int e) {
  TrackerConfig c;
  c.embedding_dim = e;
  c.motion_model = MotionModelKind::kNone;
  c.memory_size = 5;
  c.max_age = 5;
  return c;
}

Eigen::VectorXd scalar(double v) { return Eigen::VectorXd::Constant(1, v); }

TEST(AssociateFrame, LowSimilarityBecomesNewborn) {
  const auto matcher = testing::l1_matcher(1, 20.0, 10.0);
  const auto cfg = plain_config(1);
  TrackStore store(cfg.memory_size, cfg.max_age);
  NoMotion motion;
  const std::vector<Detection> f1{make_detection(1, BBox2D{10, 10, 5, 5}, scalar(0.0))};
  associate_frame(1, f1, store, cfg, &matcher, motion);
  // Raw logit 20 - 10 d against c = 10 gives similarity sigmoid(10 - 10 d).
  const double d = 1.0 + std::log(0.95 / 0.05) / 10.0;
  const std::vector<Detection> f2{make_detection(2, BBox2D{10, 10, 5, 5}, scalar(d))};
  const auto r = associate_frame(2, f2, store, cfg, &matcher, motion);
  EXPECT_TRUE(r.assignments.empty());
  EXPECT_EQ(r.newborn, (std::vector<int>{2}));
  EXPECT_EQ(store.find(1)->age, 1);

  // Same check through the cache: the similarity is 0.05.
  const Track* ptrs[] = {store.find(1)};
  const auto cache = AffinityCache::build(Eigen::MatrixXd::Constant(1, 1, d), ptrs, matcher, 10.0);
  EXPECT_NEAR(track_similarity(0, *store.find(1), cache), 0.05, 1e-9);
}

TEST(AssociateFrame, PerfectEmbeddingsRecoverIdentities) {
  sim::ScenarioConfig sc;
  sc.n_objects = 8;
  sc.n_frames = 2;
  sc.embedding.noise_sigma = 0.0;
  sc.seed = 4;
  const auto scenario = sim::generate(sc);
  const auto matcher = testing::l1_matcher(sc.embedding.dim);
  auto cfg = plain_config(sc.embedding.dim);
  TrackStore store(cfg.memory_size, cfg.max_age);
  NoMotion motion;
  const auto r1 = associate_frame(1, scenario.frames[0], store, cfg, &matcher, motion);
  std::map<int, int> track_of_label;
  for (const auto& o : r1.outputs) track_of_label[scenario.frames[0][o.detection].label] = o.track_id;
  const auto r2 = associate_frame(2, scenario.frames[1], store, cfg, &matcher, motion);
  EXPECT_TRUE(r2.newborn.empty());
  ASSERT_EQ(r2.assignments.size(), 8u);
  for (const auto& a : r2.assignments) {
    EXPECT_EQ(a.track_id, track_of_label.at(scenario.frames[1][a.detection].label));
  }
}

TEST(AssociateFrame, MotionGateBlocksDistantDetection) {
  const auto matcher = testing::l1_matcher(1);
  auto cfg = plain_config(1);
  cfg.motion_model = MotionModelKind::kKalman;
  cfg.iou_second_stage = true;
  TrackStore store(cfg.memory_size, cfg.max_age);
  KalmanForecaster motion(KalmanNoise{}, cfg.pred_horizon);
  for (int f = 1; f <= 3; ++f) {
    const std::vector<Detection> dets{make_detection(f, BBox2D{100, 100, 20, 20}, scalar(0.0))};
    associate_frame(f, dets, store, cfg, &matcher, motion);
  }
  ASSERT_EQ(store.tracks().size(), 1u);
  const std::vector<Detection> far{make_detection(4, BBox2D{600, 100, 20, 20}, scalar(0.0))};
  const auto r = associate_frame(4, far, store, cfg, &matcher, motion);
  EXPECT_TRUE(r.assignments.empty());
  EXPECT_EQ(r.newborn.size(), 1u);

  // Without the gate the identical embedding wins.
  auto open_cfg = plain_config(1);
  TrackStore open_store(open_cfg.memory_size, open_cfg.max_age);
  NoMotion none;
  for (int f = 1; f <= 3; ++f) {
    const std::vector<Detection> dets{make_detection(f, BBox2D{100, 100, 20, 20}, scalar(0.0))};
    associate_frame(f, dets, open_store, open_cfg, &matcher, none);
  }
  EXPECT_EQ(associate_frame(4, far, open_store, open_cfg, &matcher, none).assignments.size(), 1u);
}

TEST(AssociateFrame, ClassesNeverMatchAcross) {
  const auto matcher = testing::l1_matcher(1);
  const auto cfg = plain_config(1);
  TrackStore store(cfg.memory_size, cfg.max_age);
  NoMotion motion;
  const std::vector<Detection> f1{make_detection(1, BBox2D{10, 10, 5, 5}, scalar(0.0), 0)};
  associate_frame(1, f1, store, cfg, &matcher, motion);
  const std::vector<Detection> f2{make_detection(2, BBox2D{10, 10, 5, 5}, scalar(0.0), 1)};
  const auto r = associate_frame(2, f2, store, cfg, &matcher, motion);
  EXPECT_TRUE(r.assignments.empty());
  EXPECT_EQ(store.find(r.newborn.at(0))->class_id, 1);
}

TEST(AssociateFrame, MinConfidenceFiltersBeforeBirth) {
  const auto matcher = testing::l1_matcher(1);
  auto cfg = plain_config(1);
  cfg.min_confidence = 0.5;
  TrackStore store(cfg.memory_size, cfg.max_age);
  NoMotion motion;
  auto low = make_detection(1, BBox2D{10, 10, 5, 5}, scalar(0.0));
  low.confidence = 0.3;
  auto high = make_detection(1, BBox2D{50, 10, 5, 5}, scalar(3.0));
  high.confidence = 0.9;
  const std::vector<Detection> dets{low, high};
  const auto r = associate_frame(1, dets, store, cfg, &matcher, motion);
  ASSERT_EQ(r.outputs.size(), 1u);
  EXPECT_EQ(r.outputs[0].detection, 1);
}

TEST(AssociateFrame, IouStageOnlyTracker) {
  auto cfg = plain_config(1);
  cfg.use_embeddings = false;
  cfg.iou_second_stage = true;
  cfg.iou_threshold = 0.4;
  cfg.iou_max_age = 1;
  TrackStore store(cfg.memory_size, cfg.max_age);
  NoMotion motion;
  const std::vector<Detection> f1{make_detection(1, BBox2D{10, 10, 10, 10}, {}),
                                  make_detection(1, BBox2D{100, 10, 10, 10}, {})};
  associate_frame(1, f1, store, cfg, nullptr, motion);
  // Shift 2 px: IoU 8*10 / (200 - 80) = 2/3 kept; shift 6 px: 40/160 = 0.25 rejected.
  const std::vector<Detection> f2{make_detection(2, BBox2D{12, 10, 10, 10}, {}),
                                  make_detection(2, BBox2D{106, 10, 10, 10}, {})};
  const auto r = associate_frame(2, f2, store, cfg, nullptr, motion);
  ASSERT_EQ(r.assignments.size(), 1u);
  EXPECT_EQ(r.assignments[0].track_id, 1);
  EXPECT_EQ(r.assignments[0].detection, 0);
  EXPECT_EQ(r.newborn.size(), 1u);
}

TEST(AssociateFrame, IouStageSkipsTracksOlderThanLimit) {
  auto cfg = plain_config(1);
  cfg.use_embeddings = false;
  cfg.iou_second_stage = true;
  cfg.iou_max_age = 1;
  TrackStore store(cfg.memory_size, cfg.max_age);
  NoMotion motion;
  const std::vector<Detection> f1{make_detection(1, BBox2D{10, 10, 10, 10}, {})};
  associate_frame(1, f1, store, cfg, nullptr, motion);
  associate_frame(2, {}, store, cfg, nullptr, motion);
  associate_frame(3, {}, store, cfg, nullptr, motion);  // age 2 > 1
  const std::vector<Detection> f4{make_detection(4, BBox2D{10, 10, 10, 10}, {})};
  const auto r = associate_frame(4, f4, store, cfg, nullptr, motion);
  EXPECT_TRUE(r.assignments.empty());
}

TEST(AssociateFrame, InvalidInputsRejected) {
  const auto matcher = testing::l1_matcher(2);
  auto cfg = plain_config(2);
  TrackStore store(cfg.memory_size, cfg.max_age);
  NoMotion motion;
  const std::vector<Detection> box3d{make_detection(1, BBox3D{}, Eigen::VectorXd::Zero(2))};
  EXPECT_THROW(associate_frame(1, box3d, store, cfg, &matcher, motion), std::invalid_argument);
  const std::vector<Detection> wrong_dim{make_detection(1, BBox2D{}, Eigen::VectorXd::Zero(3))};
  EXPECT_THROW(associate_frame(1, wrong_dim, store, cfg, &matcher, motion), std::invalid_argument);
  const std::vector<Detection> ok{make_detection(1, BBox2D{}, Eigen::VectorXd::Zero(2))};
  EXPECT_THROW(associate_frame(1, ok, store, cfg, nullptr, motion), std::invalid_argument);
}

TEST(Tracker, RejectsMismatchedModels) {
  const auto matcher = testing::l1_matcher(3);
  auto cfg = plain_config(4);
  EXPECT_THROW(Tracker(cfg, &matcher, nullptr), std::invalid_argument);
  cfg.embedding_dim = 3;
  cfg.motion_model = MotionModelKind::kLstm;
  EXPECT_THROW(Tracker(cfg, &matcher, nullptr), std::invalid_argument);
}

// Random scenes through a random matcher.
struct RandomRun {
  std::vector<std::vector<Detection>> frames;
};

RandomRun random_run(std::mt19937_64& rng, int e, int n_frames) {
  RandomRun run;
  const int pool = 6;
  const auto identities = random_matrix(pool, e, rng);
  for (int f = 1; f <= n_frames; ++f) {
    std::vector<Detection> dets;
    for (int k = 0; k < pool; ++k) {
      if (rng() % 3 == 0) continue;
      Eigen::VectorXd emb = identities.row(k).transpose() + 0.3 * random_matrix(e, 1, rng);
      auto d = make_detection(f, BBox2D{20.0 * k + 5, 50, 10, 10}, emb);
      d.label = k;
      dets.push_back(d);
    }
    run.frames.push_back(std::move(dets));
  }
  return run;
}

TEST(AssociateFrameProperty, InjectiveAndAboveThreshold) {
  std::mt19937_64 rng(123);
  const int e = 4;
  const std::vector<int> hidden{8, 6, 4};
  for (int trial = 0; trial < 20; ++trial) {
    const auto matcher = init_matcher(e, hidden, 50 + trial);
    auto cfg = plain_config(e);
    cfg.similarity_threshold = 0.05 + 0.1 * (trial % 5);
    TrackStore store(cfg.memory_size, cfg.max_age);
    NoMotion motion;
    const auto run = random_run(rng, e, 12);
    for (int f = 1; f <= 12; ++f) {
      const auto& dets = run.frames[f - 1];
      // Pre-gate similarities computed independently from the current store.
      std::vector<const Track*> live;
      for (const auto& t : store.tracks()) live.push_back(&t);
      Eigen::MatrixXd emb_t(static_cast<Eigen::Index>(dets.size()), e);
      for (std::size_t i = 0; i < dets.size(); ++i) emb_t.row(i) = dets[i].embedding.transpose();
      const auto cache = AffinityCache::build(emb_t, live, matcher, cfg.non_match_logit);
      std::map<int, double> sim_of;
      std::map<int, const Track*> by_id;
      for (const Track* t : live) by_id[t->id] = t;

      auto snapshot = store.tracks();
      const auto r = associate_frame(f, dets, store, cfg, &matcher, motion);
      std::set<int> used_tracks, used_dets;
      for (const auto& a : r.assignments) {
        EXPECT_TRUE(used_tracks.insert(a.track_id).second);
        EXPECT_TRUE(used_dets.insert(a.detection).second);
        const Track* t = nullptr;
        for (const auto& s : snapshot) if (s.id == a.track_id) t = &s;
        ASSERT_NE(t, nullptr);
        EXPECT_GT(track_similarity(a.detection, *t, cache), cfg.similarity_threshold);
      }
      EXPECT_EQ(r.outputs.size(), dets.size());
    }
  }
}

TEST(AssociateFrameProperty, DetectionOrderOnlyRelabelsTracks) {
  std::mt19937_64 rng(9);
  const int e = 4;
  const std::vector<int> hidden{8, 6, 4};
  for (int trial = 0; trial < 10; ++trial) {
    const auto matcher = init_matcher(e, hidden, 7 + trial);
    const auto cfg = plain_config(e);
    const auto run = random_run(rng, e, 10);
    Tracker a(cfg, &matcher, nullptr), b(cfg, &matcher, nullptr);
    std::map<int, int> a_to_b;
    for (int f = 1; f <= 10; ++f) {
      auto shuffled = run.frames[f - 1];
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      const auto ra = a.step(f, run.frames[f - 1]);
      const auto rb = b.step(f, shuffled);
      std::map<int, int> a_track_of_label, b_track_of_label;
      for (const auto& o : ra.outputs) a_track_of_label[run.frames[f - 1][o.detection].label] = o.track_id;
      for (const auto& o : rb.outputs) b_track_of_label[shuffled[o.detection].label] = o.track_id;
      ASSERT_EQ(a_track_of_label.size(), b_track_of_label.size());
      for (const auto& [label, ta] : a_track_of_label) {
        const int tb = b_track_of_label.at(label);
        const auto [it, inserted] = a_to_b.emplace(ta, tb);
        EXPECT_EQ(it->second, tb) << "frame " << f;
      }
    }
  }
}

}  // namespace
}  // namespace deft
