#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "meldae/data_model.hpp"

namespace meldae {

struct PredictedSegment {
  int onset = 0;
  int offset = 0;  // inclusive
  double score = 0.0;
  bool operator==(const PredictedSegment&) const = default;
};

struct EvalConfig {
  double theta = 0.5;       // IoU threshold for a TP
  double threshold = 0.5;   // frame-score activation threshold
  int min_duration = 3;
  int merge_gap = 2;
};

struct RoleCounts {
  long tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0;
};

struct MatchLedgerEntry {
  std::string clip_id;
  PredictedSegment predicted;
  std::optional<SegmentAnnotation> matched_gt;
  double iou = 0.0;  // 0 for unmatched predictions
};

struct EvalReport {
  double acc_me = 0, acc_state = 0;
  RoleCounts speaking, listening;
  double f1_speaking = 0, f1_listening = 0, f1_dr = 0;
  std::vector<MatchLedgerEntry> match_ledger;
};

struct ClipPrediction {
  std::string clip_id;
  double p_me = 0, p_state = 0;
  Vec s_loc;
};

// Maximal runs of s_loc >= threshold; runs separated by <= merge_gap
// sub-threshold frames are merged; runs shorter than min_duration dropped.
std::vector<PredictedSegment> extract_segments(const Vec& s_loc, double threshold,
                                               int min_duration, int merge_gap);

// Inclusive-interval IoU on frame sets.
double interval_iou(int a_onset, int a_offset, int b_onset, int b_offset);

struct MatchResult {
  long tp = 0, fp = 0, fn = 0;
  // (pred index, gt index or -1, iou)
  std::vector<std::tuple<int, int, double>> pairs;
};

// One-to-one greedy matching, IoU descending; ties broken by earlier
// predicted onset, then earlier ground-truth onset.
MatchResult match_segments(const std::vector<PredictedSegment>& preds,
                           const std::vector<SegmentAnnotation>& gts, double theta);

// Harmonic mean; 0 when both inputs are 0.
double f1_dr(double f1_listening, double f1_speaking);

EvalReport evaluate(const std::map<std::string, ClipPrediction>& predictions,
                    const DatasetManifest& manifest, const EvalConfig& cfg);

std::string report_text(const EvalReport& r);
void save_report_json(const EvalReport& r, const std::filesystem::path& path,
                      bool with_ledger);

// Predictions file: one JSON record per line (clip_id, p_me, p_state, s_loc).
void save_predictions(const std::vector<ClipPrediction>& preds,
                      const std::filesystem::path& path);
std::map<std::string, ClipPrediction> load_predictions(
    const std::filesystem::path& path);

}  // namespace meldae
