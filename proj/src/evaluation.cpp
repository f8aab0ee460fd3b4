#include "meldae/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace meldae {

using json = nlohmann::ordered_json;

std::vector<PredictedSegment> extract_segments(const Vec& s_loc, double threshold,
                                               int min_duration, int merge_gap) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("threshold must be in (0,1)");
  if (min_duration < 1) throw ConfigError("min_duration must be >= 1");
  if (merge_gap < 0) throw ConfigError("merge_gap must be >= 0");

  const int T = int(s_loc.size());
  std::vector<std::pair<int, int>> runs;
  int start = -1;
  for (int t = 0; t < T; ++t) {
    bool on = s_loc[t] >= threshold;
    if (on && start < 0) start = t;
    if (!on && start >= 0) {
      runs.push_back({start, t - 1});
      start = -1;
    }
  }
  if (start >= 0) runs.push_back({start, T - 1});

  // merge runs separated by <= merge_gap sub-threshold frames
  std::vector<std::pair<int, int>> merged;
  for (auto& r : runs) {
    if (!merged.empty() && r.first - merged.back().second - 1 <= merge_gap)
      merged.back().second = r.second;
    else
      merged.push_back(r);
  }

  std::vector<PredictedSegment> out;
  for (auto& [a, b] : merged) {
    if (b - a + 1 < min_duration) continue;
    double score = 0.0;
    for (int t = a; t <= b; ++t) score += s_loc[t];
    out.push_back({a, b, score / double(b - a + 1)});
  }
  return out;
}

double interval_iou(int a_onset, int a_offset, int b_onset, int b_offset) {
  int inter = std::min(a_offset, b_offset) - std::max(a_onset, b_onset) + 1;
  if (inter <= 0) return 0.0;
  int uni = (a_offset - a_onset + 1) + (b_offset - b_onset + 1) - inter;
  return double(inter) / double(uni);
}

MatchResult match_segments(const std::vector<PredictedSegment>& preds,
                           const std::vector<SegmentAnnotation>& gts,
                           double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("theta must be in (0,1]");

  struct Cand {
    double iou;
    int pi, gi;
  };
  std::vector<Cand> cands;
  for (int pi = 0; pi < int(preds.size()); ++pi)
    for (int gi = 0; gi < int(gts.size()); ++gi) {
      double iou = interval_iou(preds[pi].onset, preds[pi].offset, gts[gi].onset,
                                gts[gi].offset);
      if (iou >= theta) cands.push_back({iou, pi, gi});
    }
  std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (preds[a.pi].onset != preds[b.pi].onset)
      return preds[a.pi].onset < preds[b.pi].onset;
    return gts[a.gi].onset < gts[b.gi].onset;
  });

  std::vector<char> pred_used(preds.size(), 0), gt_used(gts.size(), 0);
  MatchResult res;
  for (const auto& c : cands) {
    if (pred_used[c.pi] || gt_used[c.gi]) continue;
    pred_used[c.pi] = gt_used[c.gi] = 1;
    res.pairs.push_back({c.pi, c.gi, c.iou});
    ++res.tp;
  }
  for (int pi = 0; pi < int(preds.size()); ++pi)
    if (!pred_used[pi]) {
      res.pairs.push_back({pi, -1, 0.0});
      ++res.fp;
    }
  res.fn = long(gts.size()) - res.tp;
  return res;
}

double f1_dr(double f1_listening, double f1_speaking) {
  double s = f1_listening + f1_speaking;
  if (s == 0.0) return 0.0;
  return 2.0 * f1_listening * f1_speaking / s;
}

namespace {

void finish_counts(RoleCounts& c) {
  c.precision = (c.tp + c.fp) > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0;
  c.recall = (c.tp + c.fn) > 0 ? double(c.tp) / double(c.tp + c.fn) : 0.0;
  double s = c.precision + c.recall;
  c.f1 = s > 0 ? 2.0 * c.precision * c.recall / s : 0.0;
}

}  // namespace

EvalReport evaluate(const std::map<std::string, ClipPrediction>& predictions,
                    const DatasetManifest& manifest, const EvalConfig& cfg) {
  EvalReport rep;
  long me_correct = 0, state_correct = 0;
  for (const auto& rec : manifest.clips) {
    auto it = predictions.find(rec.clip_id);
    if (it == predictions.end())
      throw MissingPrediction("no prediction for clip " + rec.clip_id);
    const ClipPrediction& pred = it->second;
    if (int(pred.s_loc.size()) != rec.num_frames)
      throw ShapeError(rec.clip_id + ": s_loc length != clip frames");

    if ((pred.p_me >= 0.5) == rec.has_me) ++me_correct;
    bool said_speaking = pred.p_state >= 0.5;
    if (said_speaking == (rec.state == ConversationalState::Speaking))
      ++state_correct;

    auto segs = extract_segments(pred.s_loc, cfg.threshold, cfg.min_duration,
                                 cfg.merge_gap);
    MatchResult m = match_segments(segs, rec.segments, cfg.theta);
    RoleCounts& rc =
        rec.state == ConversationalState::Speaking ? rep.speaking : rep.listening;
    rc.tp += m.tp;
    rc.fp += m.fp;
    rc.fn += m.fn;
    for (const auto& [pi, gi, iou] : m.pairs) {
      MatchLedgerEntry e;
      e.clip_id = rec.clip_id;
      e.predicted = segs[pi];
      if (gi >= 0) e.matched_gt = rec.segments[gi];
      e.iou = iou;
      rep.match_ledger.push_back(std::move(e));
    }
  }
  const double n = double(manifest.clips.size());
  rep.acc_me = n > 0 ? me_correct / n : 0.0;
  rep.acc_state = n > 0 ? state_correct / n : 0.0;
  finish_counts(rep.speaking);
  finish_counts(rep.listening);
  rep.f1_speaking = rep.speaking.f1;
  rep.f1_listening = rep.listening.f1;
  rep.f1_dr = f1_dr(rep.f1_listening, rep.f1_speaking);
  return rep;
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  auto role = [&](const char* name, const RoleCounts& c) {
    os << name << ": tp=" << c.tp << " fp=" << c.fp << " fn=" << c.fn
       << " precision=" << c.precision << " recall=" << c.recall << " f1=" << c.f1
       << "\n";
  };
  os << "acc_me=" << r.acc_me << "\n";
  os << "acc_state=" << r.acc_state << "\n";
  role("speaking", r.speaking);
  role("listening", r.listening);
  os << "f1_dr=" << r.f1_dr << "\n";
  return os.str();
}

namespace {

json counts_json(const RoleCounts& c) {
  return json{{"tp", c.tp},       {"fp", c.fp},
              {"fn", c.fn},       {"precision", c.precision},
              {"recall", c.recall}, {"f1", c.f1}};
}

}  // namespace

void save_report_json(const EvalReport& r, const std::filesystem::path& path,
                      bool with_ledger) {
  json j{{"acc_me", r.acc_me},
         {"acc_state", r.acc_state},
         {"speaking", counts_json(r.speaking)},
         {"listening", counts_json(r.listening)},
         {"f1_speaking", r.f1_speaking},
         {"f1_listening", r.f1_listening},
         {"f1_dr", r.f1_dr}};
  if (with_ledger) {
    json ledger = json::array();
    for (const auto& e : r.match_ledger) {
      json le{{"clip_id", e.clip_id},
              {"pred", {e.predicted.onset, e.predicted.offset}},
              {"score", e.predicted.score},
              {"iou", e.iou}};
      if (e.matched_gt)
        le["gt"] = {e.matched_gt->onset, e.matched_gt->offset};
      else
        le["gt"] = nullptr;
      ledger.push_back(std::move(le));
    }
    j["match_ledger"] = std::move(ledger);
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write report: " + path.string());
  os << j.dump(2) << "\n";
}

void save_predictions(const std::vector<ClipPrediction>& preds,
                      const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write predictions: " + path.string());
  for (const auto& p : preds) {
    json j{{"clip_id", p.clip_id}, {"p_me", p.p_me}, {"p_state", p.p_state}};
    json s = json::array();
    for (Eigen::Index i = 0; i < p.s_loc.size(); ++i) s.push_back(p.s_loc[i]);
    j["s_loc"] = std::move(s);
    os << j.dump() << "\n";
  }
}

std::map<std::string, ClipPrediction> load_predictions(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open predictions: " + path.string());
  std::map<std::string, ClipPrediction> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("predictions: ") + e.what());
    }
    ClipPrediction p;
    p.clip_id = j.at("clip_id").get<std::string>();
    p.p_me = j.at("p_me").get<double>();
    p.p_state = j.at("p_state").get<double>();
    const auto& s = j.at("s_loc");
    p.s_loc.resize(s.size());
    for (size_t i = 0; i < s.size(); ++i) p.s_loc[i] = s[i].get<double>();
    out[p.clip_id] = std::move(p);
  }
  return out;
}

}  // namespace meldae
