#pragma once

#include <map>
#include <opencv2/core.hpp>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "omnicd/tensor.hpp"

namespace omnicd {

/// One standardized sample: bi-temporal images, a {0,255} mask, a prompt.
struct SampleRecord {
    std::string id;
    std::string image_t1;
    std::string image_t2;
    std::string mask;
    std::string prompt;
    std::string source_dataset;
    std::vector<std::string> classes;
};

enum class LabelKind { single_binary, multi_single_temporal, multi_bi_temporal };

struct LabelSource {
    LabelKind kind = LabelKind::single_binary;
    std::map<int, std::string> class_map;  // pixel value -> class name; 0 reserved
};

/// {0,x} label -> {0,255}. Rejects labels with more than two distinct values.
cv::Mat standardize_binary(const cv::Mat& label);

/// One mask per class subset (|subset| <= max_subset) plus the full union.
std::vector<std::pair<cv::Mat, std::vector<std::string>>> expand_multiclass_single(
    const cv::Mat& label, const std::map<int, std::string>& class_map, int max_subset);

/// One mask per ordered class transition present in the pair.
std::vector<std::pair<cv::Mat, std::pair<std::string, std::string>>> expand_bitemporal_pairs(
    const cv::Mat& label1, const cv::Mat& label2, const std::map<int, std::string>& class_map);

struct Tile {
    cv::Mat data;      // target x target
    bool padded = false;
    int x0 = 0, y0 = 0;       // position in the source
    int valid_w = 0, valid_h = 0;  // unpadded extent
};

/// Crop-or-resample to the target resolution. Larger sources tile
/// (right/bottom remainders zero-padded and flagged); smaller ones resample,
/// bilinear for images and nearest for labels.
std::vector<Tile> resize_standard(const cv::Mat& grid, int target, bool is_label);

// ---- manifest (JSON lines) ----
void write_manifest(const std::vector<SampleRecord>& records, const std::string& path);
std::vector<SampleRecord> load_manifest(const std::string& path);

/// Rasters of one manifest record decoded to tensors: images [3,S,S] in [0,1],
/// mask [S,S] in {0,1}.
struct BiTemporalSample {
    Tensor image1, image2, mask;
    std::string prompt;
};
BiTemporalSample load_sample(const SampleRecord& rec, const std::string& root);

// ---- synthetic desk-scale data ----

struct SynthShape {
    int cls = -1;              // index into synth_classes(); -1 = persistent scenery
    bool is_rect = true;
    int x = 0, y = 0, w = 0, h = 0;
    cv::Scalar color;
    int epoch = 2;             // 0 = only t1, 1 = only t2, 2 = both
};

struct SynthScene {
    int size = 0;
    cv::Scalar background;
    std::uint64_t noise_seed = 0;  // background texture, shared by both epochs
    std::vector<SynthShape> shapes;
    cv::Scalar jitter_gain, jitter_bias;  // epoch-2 global color shift
};

const std::vector<std::string>& synth_classes();  // {"red squares","blue disks"}

SynthScene synth_scene(std::mt19937_64& rng, int size);
cv::Mat render_epoch(const SynthScene& scene, int epoch);
cv::Mat render_class_mask(const SynthScene& scene, int cls);

/// Writes n records (two per scene, one per change class) under out_dir and
/// returns them; deterministic under seed.
std::vector<SampleRecord> synth_generate(int n, std::uint64_t seed, int size,
                                         const std::string& out_dir);

// ---- small raster/tensor bridges ----
Tensor image_to_tensor(const cv::Mat& img8u3);           // [3,H,W] in [0,1]
cv::Mat tensor_to_image(const Tensor& t);                // [3,H,W] -> 8UC3
Tensor mask_to_tensor(const cv::Mat& mask8u1);           // {0,255} -> [H,W] {0,1}
cv::Mat tensor_to_mask(const Tensor& t);                 // {0,1} -> {0,255}
cv::Mat prob_to_gray(const Tensor& t);                   // [0,1] -> 8-bit

}  // namespace omnicd
