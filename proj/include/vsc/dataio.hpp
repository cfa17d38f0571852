// SPDX-License-Identifier: Apache-2.0
//
// Binary frame-feature files, segment-label text files, dataset manifests,
// synthetic dataset generation, training-time frame sampling, and
// segment-window extraction with shift clamping.
//
// Feature file layout (little-endian):
//   magic "FVC1", version u16
//   per record: id length u16 + bytes, frame count u32, visual dim u16,
//               audio dim u16, visual f32 row-major, audio f32 row-major,
//               label count u16, class ids u16 each
// Features are f32 on disk and f64 in memory; the generator emits
// f32-representable values so round trips are exact.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vsc/tensor.hpp"

namespace vsc {

class Rng;

// Segments are fixed five-frame windows.
inline constexpr int kSegmentFrames = 5;

struct FrameFeatureSequence {
  std::string video_id;
  int frames = 0;
  int dim_visual = 0;
  int dim_audio = 0;
  std::vector<double> visual;  // frames x dim_visual, row-major
  std::vector<double> audio;   // frames x dim_audio, row-major
  std::vector<int> labels;     // video-level class ids, ascending

  double visual_at(int i, int j) const { return visual[static_cast<std::size_t>(i) * dim_visual + j]; }
  double audio_at(int i, int j) const { return audio[static_cast<std::size_t>(i) * dim_audio + j]; }
};

struct SegmentLabel {
  std::string video_id;
  int start = 0;     // 0-based first frame
  int class_id = 0;
  bool positive = false;
};

// "videoid:startframe"
std::string segment_id(const std::string& video_id, int start);

struct DatasetManifest {
  int classes = 0;
  int dim_visual = 0;
  int dim_audio = 0;
  std::uint64_t seed = 0;
  // split name -> file names; feature files under "<split>_features",
  // segment files under "<split>_segments"
  std::map<std::string, std::string> files;
  std::filesystem::path base_dir;  // directory of the manifest file

  std::filesystem::path resolve(const std::string& key) const;
  bool has(const std::string& key) const { return files.count(key) != 0; }
};

void write_features(const std::vector<FrameFeatureSequence>& sequences,
                    const std::filesystem::path& path);
std::vector<FrameFeatureSequence> read_features(const std::filesystem::path& path);

void write_segments(const std::vector<SegmentLabel>& segments, const std::filesystem::path& path);
std::vector<SegmentLabel> read_segments(const std::filesystem::path& path);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

enum class SampleMode { kWithReplacement, kSubsequence };
SampleMode sample_mode_from_string(const std::string& s);

// N x (dim_visual + dim_audio) frame matrix. With-replacement draws are
// sorted to preserve temporal order; subsequence picks a random contiguous
// window (cyclic when n exceeds the sequence length).
Tensor sample_frames(const FrameFeatureSequence& seq, int n, SampleMode mode, Rng& rng);

// Five-row window at start + shift*unit, clamped so the window stays inside
// the sequence.
Tensor extract_segment(const FrameFeatureSequence& seq, int start, int shift, int unit = 1);

struct SynthConfig {
  int classes = 20;
  int videos = 500;
  int frames = 30;         // base frame count; actual length varies slightly
  int dim_visual = 16;
  int dim_audio = 4;
  std::uint64_t seed = 42;
  double prototype_scale = 1.6;
  double segment_noise = 0.45;
  double background_noise = 0.8;
  // class evidence bleeds this many frames past the labeled window on each
  // side, the way real entities persist around an annotated segment
  int halo_frames = 2;
  // video share per split; remainder goes to test
  double pretrain_fraction = 0.6;
  double finetune_fraction = 0.2;
  double holdout_fraction = 0.1;
};

// Writes feature/segment/manifest files for the four splits into out_dir
// and returns the manifest. Deterministic for a given config.
DatasetManifest synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

// Class prototypes used by the generator (visual columns then audio), one
// row per class; exposed so evaluation oracles can rebuild them.
std::vector<std::vector<double>> synth_prototypes(const SynthConfig& config);

}  // namespace vsc
