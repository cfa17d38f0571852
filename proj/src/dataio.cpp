// SPDX-License-Identifier: Apache-2.0

#include "vsc/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vsc/errors.hpp"
#include "vsc/rng.hpp"

namespace vsc {

namespace {

constexpr char kMagic[4] = {'F', 'V', 'C', '1'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  bool eof() const { return pos_ == size_; }

  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
      v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_) + pos_, n);
    pos_ += n;
    return s;
  }

  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(uint(4))); }

  void need(std::size_t n) const {
    if (pos_ + n > size_) throw FormatError(what_ + ": truncated file");
  }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

double f32_round(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

std::string segment_id(const std::string& video_id, int start) {
  return video_id + ":" + std::to_string(start);
}

std::filesystem::path DatasetManifest::resolve(const std::string& key) const {
  auto it = files.find(key);
  if (it == files.end()) throw FormatError("manifest has no entry for " + key);
  return base_dir / it->second;
}

void write_features(const std::vector<FrameFeatureSequence>& sequences,
                    const std::filesystem::path& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  for (const auto& seq : sequences) {
    if (seq.frames < 1) throw FormatError("sequence " + seq.video_id + " has no frames");
    put_u16(out, static_cast<std::uint16_t>(seq.video_id.size()));
    out.append(seq.video_id);
    put_u32(out, static_cast<std::uint32_t>(seq.frames));
    put_u16(out, static_cast<std::uint16_t>(seq.dim_visual));
    put_u16(out, static_cast<std::uint16_t>(seq.dim_audio));
    for (double v : seq.visual) put_f32(out, static_cast<float>(v));
    for (double v : seq.audio) put_f32(out, static_cast<float>(v));
    put_u16(out, static_cast<std::uint16_t>(seq.labels.size()));
    for (int c : seq.labels) put_u16(out, static_cast<std::uint16_t>(c));
  }
  write_file(path, out);
}

std::vector<FrameFeatureSequence> read_features(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  Reader r(buf.data(), buf.size(), path.string());
  if (r.bytes(4) != std::string(kMagic, 4)) throw FormatError(path.string() + ": bad feature-file magic");
  const auto version = r.uint(2);
  if (version != kVersion)
    throw FormatError(path.string() + ": unsupported feature-file version " + std::to_string(version));
  std::vector<FrameFeatureSequence> sequences;
  while (!r.eof()) {
    FrameFeatureSequence seq;
    seq.video_id = r.bytes(static_cast<std::size_t>(r.uint(2)));
    seq.frames = static_cast<int>(r.uint(4));
    seq.dim_visual = static_cast<int>(r.uint(2));
    seq.dim_audio = static_cast<int>(r.uint(2));
    if (seq.frames < 1) throw FormatError(path.string() + ": record " + seq.video_id + " has no frames");
    seq.visual.resize(static_cast<std::size_t>(seq.frames) * seq.dim_visual);
    for (auto& v : seq.visual) v = static_cast<double>(r.f32());
    seq.audio.resize(static_cast<std::size_t>(seq.frames) * seq.dim_audio);
    for (auto& v : seq.audio) v = static_cast<double>(r.f32());
    const auto count = r.uint(2);
    seq.labels.resize(static_cast<std::size_t>(count));
    for (auto& c : seq.labels) c = static_cast<int>(r.uint(2));
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

void write_segments(const std::vector<SegmentLabel>& segments, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& s : segments)
    out << s.video_id << '\t' << s.start << '\t' << s.class_id << '\t' << (s.positive ? 1 : 0) << '\n';
  write_file(path, out.str());
}

std::vector<SegmentLabel> read_segments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<SegmentLabel> segments;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    SegmentLabel s;
    int verdict = -1;
    if (!(ls >> s.video_id >> s.start >> s.class_id >> verdict) || (verdict != 0 && verdict != 1))
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected video<TAB>start<TAB>class<TAB>{0,1}");
    s.positive = verdict == 1;
    segments.push_back(std::move(s));
  }
  return segments;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "classes=" << manifest.classes << '\n';
  out << "dim_visual=" << manifest.dim_visual << '\n';
  out << "dim_audio=" << manifest.dim_audio << '\n';
  out << "seed=" << manifest.seed << '\n';
  for (const auto& [key, value] : manifest.files) out << key << '=' << value << '\n';
  write_file(path, out.str());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "classes") m.classes = std::stoi(value);
      else if (key == "dim_visual") m.dim_visual = std::stoi(value);
      else if (key == "dim_audio") m.dim_audio = std::stoi(value);
      else if (key == "seed") m.seed = std::stoull(value);
      else m.files[key] = value;
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  if (m.classes < 1 || m.dim_visual < 1 || m.dim_audio < 0)
    throw FormatError(path.string() + ": incomplete manifest");
  return m;
}

namespace {

void copy_frame(const FrameFeatureSequence& seq, int frame, double* dst) {
  for (int j = 0; j < seq.dim_visual; ++j) dst[j] = seq.visual_at(frame, j);
  for (int j = 0; j < seq.dim_audio; ++j) dst[seq.dim_visual + j] = seq.audio_at(frame, j);
}

}  // namespace

SampleMode sample_mode_from_string(const std::string& s) {
  if (s == "with_replacement") return SampleMode::kWithReplacement;
  if (s == "subsequence") return SampleMode::kSubsequence;
  throw std::invalid_argument("unknown sample mode: " + s);
}

Tensor sample_frames(const FrameFeatureSequence& seq, int n, SampleMode mode, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_frames: n must be >= 1");
  const int width = seq.dim_visual + seq.dim_audio;
  std::vector<int> idx(static_cast<std::size_t>(n));
  if (mode == SampleMode::kWithReplacement) {
    for (auto& i : idx) i = rng.uniform_int(seq.frames);
    std::sort(idx.begin(), idx.end());
  } else if (n <= seq.frames) {
    const int start = rng.uniform_int(seq.frames - n + 1);
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = start + i;
  } else {
    // longer than the video: wrap around cyclically
    const int start = rng.uniform_int(seq.frames);
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = (start + i) % seq.frames;
  }
  Tensor out({n, width});
  for (int i = 0; i < n; ++i) copy_frame(seq, idx[static_cast<std::size_t>(i)], &out.at(i, 0));
  return out;
}

Tensor extract_segment(const FrameFeatureSequence& seq, int start, int shift, int unit) {
  if (start < 0 || start + kSegmentFrames > seq.frames)
    throw std::invalid_argument("extract_segment: start " + std::to_string(start) +
                                " out of range for " + std::to_string(seq.frames) + " frames");
  int s = start + shift * unit;
  s = std::max(0, std::min(s, seq.frames - kSegmentFrames));
  const int width = seq.dim_visual + seq.dim_audio;
  Tensor out({kSegmentFrames, width});
  for (int i = 0; i < kSegmentFrames; ++i) copy_frame(seq, s + i, &out.at(i, 0));
  return out;
}

std::vector<std::vector<double>> synth_prototypes(const SynthConfig& config) {
  Rng rng(derive_seed(config.seed, 1));
  const int width = config.dim_visual + config.dim_audio;
  std::vector<std::vector<double>> protos(static_cast<std::size_t>(config.classes));
  for (auto& p : protos) {
    p.resize(static_cast<std::size_t>(width));
    for (auto& v : p) v = f32_round(rng.normal() * config.prototype_scale);
  }
  return protos;
}

DatasetManifest synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir) {
  if (config.classes < 1 || config.videos < 4 || config.frames < kSegmentFrames + 2)
    throw std::invalid_argument("synth_generate: config too small");
  std::filesystem::create_directories(out_dir);
  const auto protos = synth_prototypes(config);

  struct Split {
    std::vector<FrameFeatureSequence> features;
    std::vector<SegmentLabel> segments;
  };
  std::map<std::string, Split> splits;
  auto split_of = [&](int video_index) -> std::string {
    const double f = static_cast<double>(video_index) / config.videos;
    if (f < config.pretrain_fraction) return "pretrain";
    if (f < config.pretrain_fraction + config.finetune_fraction) return "finetune";
    if (f < config.pretrain_fraction + config.finetune_fraction + config.holdout_fraction)
      return "holdout";
    return "test";
  };

  for (int v = 0; v < config.videos; ++v) {
    Rng rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(v)));
    FrameFeatureSequence seq;
    seq.video_id = "v" + std::to_string(v);
    seq.frames = config.frames + rng.uniform_int(6);
    seq.dim_visual = config.dim_visual;
    seq.dim_audio = config.dim_audio;
    seq.visual.resize(static_cast<std::size_t>(seq.frames) * config.dim_visual);
    seq.audio.resize(static_cast<std::size_t>(seq.frames) * config.dim_audio);
    for (auto& x : seq.visual) x = f32_round(rng.normal() * config.background_noise);
    for (auto& x : seq.audio) x = f32_round(rng.normal() * config.background_noise);

    // positive spans near a class prototype, spaced so their evidence halos
    // stay clear of one another
    const int spacing = kSegmentFrames + config.halo_frames;
    const int n_pos = 1 + rng.uniform_int(3);
    std::vector<std::pair<int, int>> spans;  // (start, class)
    for (int s = 0; s < n_pos; ++s) {
      int start = -1;
      for (int attempt = 0; attempt < 20; ++attempt) {
        const int cand = rng.uniform_int(seq.frames - kSegmentFrames + 1);
        bool overlaps = false;
        for (const auto& [other, cls] : spans)
          if (std::abs(other - cand) < spacing) overlaps = true;
        if (!overlaps) {
          start = cand;
          break;
        }
      }
      if (start < 0) continue;
      const int cls = rng.uniform_int(config.classes);
      spans.emplace_back(start, cls);
      const auto& proto = protos[static_cast<std::size_t>(cls)];
      const int lo = std::max(0, start - config.halo_frames);
      const int hi = std::min(seq.frames, start + kSegmentFrames + config.halo_frames);
      for (int i = lo; i < hi; ++i) {
        for (int j = 0; j < config.dim_visual; ++j)
          seq.visual[static_cast<std::size_t>(i) * config.dim_visual + j] =
              f32_round(proto[static_cast<std::size_t>(j)] + rng.normal() * config.segment_noise);
        for (int j = 0; j < config.dim_audio; ++j)
          seq.audio[static_cast<std::size_t>(i) * config.dim_audio + j] = f32_round(
              proto[static_cast<std::size_t>(config.dim_visual + j)] + rng.normal() * config.segment_noise);
      }
    }
    std::set<int> classes;
    for (const auto& [start, cls] : spans) classes.insert(cls);
    seq.labels.assign(classes.begin(), classes.end());

    const std::string split = split_of(v);
    auto& bucket = splits[split];
    if (split != "pretrain") {
      for (const auto& [start, cls] : spans)
        bucket.segments.push_back({seq.video_id, start, cls, true});
      // verified negatives: background spans proposed for a random class,
      // plus one wrong-class proposal on a real span; keep them outside
      // every positive halo
      const int n_neg = 1 + rng.uniform_int(2);
      for (int s = 0; s < n_neg; ++s) {
        int start = -1;
        for (int attempt = 0; attempt < 20; ++attempt) {
          const int cand = rng.uniform_int(seq.frames - kSegmentFrames + 1);
          bool overlaps = false;
          for (const auto& [other, cls] : spans)
            if (std::abs(other - cand) < spacing) overlaps = true;
          if (!overlaps) {
            start = cand;
            break;
          }
        }
        if (start < 0) continue;
        bucket.segments.push_back({seq.video_id, start, rng.uniform_int(config.classes), false});
      }
      if (!spans.empty() && config.classes > 1) {
        const auto& [start, cls] = spans[0];
        const int wrong = (cls + 1 + rng.uniform_int(config.classes - 1)) % config.classes;
        bucket.segments.push_back({seq.video_id, start, wrong, false});
      }
    }
    bucket.features.push_back(std::move(seq));
  }

  for (const auto* name : {"pretrain", "finetune", "holdout", "test"})
    if (splits.find(name) == splits.end() || splits[name].features.empty())
      throw std::invalid_argument(std::string("synth_generate: too few videos to populate the ") +
                                  name + " split");

  DatasetManifest manifest;
  manifest.classes = config.classes;
  manifest.dim_visual = config.dim_visual;
  manifest.dim_audio = config.dim_audio;
  manifest.seed = config.seed;
  manifest.base_dir = out_dir;
  for (auto& [name, split] : splits) {
    const std::string feature_file = name + ".fvc";
    write_features(split.features, out_dir / feature_file);
    manifest.files[name + "_features"] = feature_file;
    if (name != "pretrain") {
      const std::string segment_file = name + "_segments.tsv";
      write_segments(split.segments, out_dir / segment_file);
      manifest.files[name + "_segments"] = segment_file;
    }
  }
  write_manifest(manifest, out_dir / "manifest.txt");
  return manifest;
}

}  // namespace vsc
