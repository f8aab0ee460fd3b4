#include "meldae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace meldae {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (n_clips < 1) throw ConfigError("n_clips must be >= 1");
  if (T < 2) throw ConfigError("T must be >= 2");
  if (D_in < 1 || n_regions < 1 || D_in % n_regions != 0)
    throw ConfigError("D_in must be a positive multiple of n_regions");
  if (me_probability < 0.0 || me_probability > 1.0)
    throw ConfigError("me_probability must be in [0,1]");
  if (!(1 <= me_duration_min && me_duration_min <= me_duration_max &&
        me_duration_max < T))
    throw ConfigError("need 1 <= me_duration_min <= me_duration_max < T");
  if (!(me_amplitude < speech_noise_amplitude))
    throw ConfigError("me_amplitude must be below speech_noise_amplitude");
  if (speaking_fraction < 0.0 || speaking_fraction > 1.0)
    throw ConfigError("speaking_fraction must be in [0,1]");
}

namespace {

// onset -> apex -> offset triangle, peak me_amplitude, support == [onset, offset]
double ramp_value(int t, int onset, int apex, int offset, double amplitude) {
  if (t < onset || t > offset) return 0.0;
  if (t <= apex) return amplitude * double(t - onset + 1) / double(apex - onset + 1);
  return amplitude * double(offset - t + 1) / double(offset - apex + 1);
}

Mat blob_frames(const SynthConfig& cfg, Rng& rng, const Mat& drive) {
  // moving Gaussian blob whose brightness is driven by the summed feature row
  int H = cfg.frame_size, W = cfg.frame_size;
  Mat out(cfg.T, H * W);
  double cx = rng.uniform(4.0, W - 4.0), cy = rng.uniform(4.0, H - 4.0);
  double vx = rng.uniform(-0.3, 0.3), vy = rng.uniform(-0.3, 0.3);
  for (int t = 0; t < cfg.T; ++t) {
    double bright = drive.row(t).mean();
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        out(t, y * W + x) = bright * std::exp(-d2 / 8.0) +
                            0.05 * rng.normal();
      }
    cx = std::clamp(cx + vx, 2.0, W - 2.0);
    cy = std::clamp(cy + vy, 2.0, H - 2.0);
  }
  return out;
}

}  // namespace

GeneratedClip generate_clip(const SynthConfig& cfg, int index) {
  Rng rng = Rng::substream(cfg.seed, std::uint64_t(index));
  GeneratedClip out;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "synth_%05d", index);
  out.record.clip_id = buf;
  out.record.payload = std::string(buf) + ".bin";
  out.record.fps = 30.0;
  out.record.num_frames = cfg.T;

  bool speaking = rng.bernoulli(cfg.speaking_fraction);
  bool has_me = rng.bernoulli(cfg.me_probability);
  out.record.state =
      speaking ? ConversationalState::Speaking : ConversationalState::Listening;
  out.record.has_me = has_me;

  const int T = cfg.T, D = cfg.D_in, R = cfg.n_regions, gd = D / R;

  out.components.base_noise.resize(T, D);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d)
      out.components.base_noise(t, d) = rng.normal(0.0, cfg.base_noise_std);

  out.components.speech = Mat::Zero(T, D);
  if (speaking) {
    int n_sin = int(rng.uniform_int(2, 4));
    double amp = cfg.speech_noise_amplitude / std::sqrt(double(n_sin));
    for (int k = 0; k < n_sin; ++k) {
      double cycles = rng.uniform(0.5, 3.0);
      double phase = rng.uniform(0.0, 2.0 * M_PI);
      // common-mode across dims: global talking motion hits every region alike
      for (int t = 0; t < T; ++t) {
        double s = amp * std::sin(2.0 * M_PI * cycles * t / double(T) + phase);
        for (int d = 0; d < D; ++d) out.components.speech(t, d) += s;
      }
    }
    double jitter = 0.05 * cfg.speech_noise_amplitude;
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < D; ++d)
        out.components.speech(t, d) += rng.normal(0.0, jitter);
  }

  out.components.me_signal = Mat::Zero(T, D);
  if (has_me) {
    int duration = int(rng.uniform_int(cfg.me_duration_min, cfg.me_duration_max));
    int onset = int(rng.uniform_int(0, T - duration));
    int offset = onset + duration - 1;
    int apex = int(rng.uniform_int(onset, offset));
    int n_affected = int(rng.uniform_int(1, std::max(1, R / 2)));
    std::vector<int> regions(R);
    std::iota(regions.begin(), regions.end(), 0);
    for (int i = R - 1; i > 0; --i)
      std::swap(regions[i], regions[rng.uniform_int(0, i)]);
    regions.resize(n_affected);
    for (int r : regions)
      for (int t = onset; t <= offset; ++t) {
        double v = ramp_value(t, onset, apex, offset, cfg.me_amplitude);
        for (int d = r * gd; d < (r + 1) * gd; ++d)
          out.components.me_signal(t, d) = v;
      }
    out.record.segments.push_back({onset, offset, out.record.state});
  }

  Mat features =
      out.components.base_noise + out.components.speech + out.components.me_signal;
  if (cfg.frames_mode) {
    out.record.kind = PayloadKind::Frames;
    out.payload = blob_frames(cfg, rng, features);
  } else {
    out.record.kind = PayloadKind::Features;
    out.payload = std::move(features);
  }
  return out;
}

DatasetManifest generate(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());

  DatasetManifest m;
  m.dir = out_dir;
  for (int i = 0; i < cfg.n_clips; ++i) {
    GeneratedClip clip = generate_clip(cfg, i);
    std::vector<std::uint32_t> shape;
    if (cfg.frames_mode)
      shape = {std::uint32_t(cfg.T), 1, std::uint32_t(cfg.frame_size),
               std::uint32_t(cfg.frame_size)};
    else
      shape = {std::uint32_t(cfg.T), std::uint32_t(cfg.D_in)};
    write_array(out_dir / clip.record.payload, clip.payload, shape);
    m.clips.push_back(std::move(clip.record));
  }
  save_manifest(m, out_dir / "manifest.jsonl");
  return load_manifest(out_dir / "manifest.jsonl");
}

SplitResult split(const DatasetManifest& manifest, double train_fraction,
                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must be in (0,1)");
  const int n = int(manifest.clips.size());
  if (n < 2) throw ConfigError("need at least 2 clips to split");

  auto stratum_of = [](const ClipRecord& r) {
    return (r.has_me ? 2 : 0) + (r.state == ConversationalState::Speaking ? 1 : 0);
  };
  std::array<std::vector<int>, 4> strata;
  for (int i = 0; i < n; ++i) strata[stratum_of(manifest.clips[i])].push_back(i);

  Rng rng = Rng::substream(seed, 0x5917ull);
  auto shuffle = [&rng](std::vector<int>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i)
      std::swap(v[i], v[rng.uniform_int(0, i)]);
  };

  int target_train = int(std::llround(train_fraction * n));
  target_train = std::clamp(target_train, 1, n - 1);

  // per-stratum floor allocation, remainder to the largest fractional parts
  std::array<int, 4> take{};
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int s = 0; s < 4; ++s) {
    double exact = train_fraction * double(strata[s].size());
    take[s] = int(std::floor(exact));
    assigned += take[s];
    remainders.push_back({exact - take[s], s});
  }
  std::sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (int i = 0; i < 4 && assigned < target_train; ++i) {
    int s = remainders[i].second;
    if (take[s] < int(strata[s].size())) {
      ++take[s];
      ++assigned;
    }
  }

  std::vector<char> in_train(n, 0);
  for (int s = 0; s < 4; ++s) {
    shuffle(strata[s]);
    for (int i = 0; i < take[s]; ++i) in_train[strata[s][i]] = 1;
  }

  SplitResult out;
  int n_train = int(std::count(in_train.begin(), in_train.end(), char(1)));
  if (n_train == 0 || n_train == n) {
    // stratification degenerated; plain shuffled split instead
    out.warning = "stratified split degenerate; fell back to unstratified";
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    shuffle(all);
    std::fill(in_train.begin(), in_train.end(), 0);
    for (int i = 0; i < target_train; ++i) in_train[all[i]] = 1;
  }

  out.train.dir = manifest.dir;
  out.eval.dir = manifest.dir;
  for (int i = 0; i < n; ++i)
    (in_train[i] ? out.train : out.eval).clips.push_back(manifest.clips[i]);
  return out;
}

}  // namespace meldae
