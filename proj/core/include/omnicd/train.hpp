#pragma once

#include <string>
#include <vector>

#include "omnicd/datakit.hpp"
#include "omnicd/metrics.hpp"
#include "omnicd/model.hpp"
#include "omnicd/objectives.hpp"

namespace omnicd {

/// Adam with bias correction, keyed to a fixed parameter list.
struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<Tensor> m, v;
    long t = 0;
    void init(const NamedParams& params);
    void step(NamedParams& params);
};

struct TrainConfig {
    int steps = 500;
    int batch_size = 2;
    double lr = 1e-3;
    double lr_min = -1.0;  // >= 0 enables cosine decay from lr down to lr_min
    std::uint64_t seed = 0;
    int log_every = 10;
    int checkpoint_every = 0;  // 0 = final checkpoint only
    std::string out_dir = ".";
};

struct TrainResult {
    double final_total = 0.0;
    std::string checkpoint_path;
    std::string loss_csv_path;
};

/// Full loss for one sample: forward pass plus the four objectives.
LossReport sample_loss(const Model& model, const BiTemporalSample& s, bool training = false,
                       Rng* drop_rng = nullptr);

/// Deterministic under (config.seed, records order). Writes
/// out_dir/loss.csv with columns step,l_cd,l_sep,l_content,l_rec,total and
/// out_dir/model.ckpt. Non-finite losses abort with NumericError.
TrainResult train_model(Model& model, const std::vector<SampleRecord>& records,
                        const std::string& data_root, const TrainConfig& config);

struct EvalResult {
    MetricReport overall;       // micro-averaged over all pixels
    ConfusionCounts counts;
    std::string per_sample_csv;  // id,precision,recall,f1,iou,acc
};

EvalResult evaluate_model(const Model& model, const std::vector<SampleRecord>& records,
                          const std::string& data_root, double threshold = 0.5);

/// Writes mask.png ({0,255}), prob.png and roi.png (8-bit) under out_dir.
void infer_to_dir(const Model& model, const BiTemporalSample& s, const std::string& out_dir,
                  double threshold = 0.5);

}  // namespace omnicd
