#include "omnicd/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <utility>

#include <opencv2/imgcodecs.hpp>

#include "omnicd/checkpoint.hpp"
#include "omnicd/errors.hpp"

namespace fs = std::filesystem;

namespace omnicd {

void Adam::init(const NamedParams& params) {
    m.clear();
    v.clear();
    t = 0;
    for (const auto& [name, p] : params) {
        m.push_back(Tensor::zeros(p->v.shape));
        v.push_back(Tensor::zeros(p->v.shape));
    }
}

void Adam::step(NamedParams& params) {
    if (m.size() != params.size()) throw DataError("Adam: not initialized for this parameter set");
    ++t;
    double bc1 = 1.0 - std::pow(beta1, t);
    double bc2 = 1.0 - std::pow(beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
        Node& p = *params[i].second;
        if (!p.has_grad()) continue;
        m[i].data = beta1 * m[i].data + (1.0 - beta1) * p.g.data;
        v[i].data = beta2 * v[i].data + (1.0 - beta2) * p.g.data.square();
        p.v.data -= lr * (m[i].data / bc1) / ((v[i].data / bc2).sqrt() + eps);
    }
}

LossReport sample_loss(const Model& model, const BiTemporalSample& s, bool training,
                       Rng* drop_rng) {
    ModelOutputs out = model.forward(s.image1, s.image2, s.prompt, training, drop_rng);
    // The mask decoder is supervised directly on its ROI map in addition to
    // the filtered prediction; without this the ROI saturates early and the
    // gradient through the elementwise product vanishes, leaving the prompt
    // unable to discriminate change classes.
    Var l_cd = scale(add(change_detection_loss(out.filtered_prob, s.mask),
                         scale(change_detection_loss(out.roi.data, s.mask), 0.5)),
                     1.0 / 1.5);
    Var l_sep = scale(add(separation_loss(out.content1, out.style1),
                          separation_loss(out.content2, out.style2)),
                      0.5);
    Tensor unchanged = unchanged_cell_grid(s.mask, model.cfg.grid_side());
    Var l_content = content_similarity_loss(out.content1, out.content2, unchanged);
    Var l_rec = reconstruction_loss(out.recon1, s.image1, out.recon2, s.image2);
    return total_loss(l_cd, l_sep, l_content, l_rec, model.cfg.lambdas);
}

TrainResult train_model(Model& model, const std::vector<SampleRecord>& records,
                        const std::string& data_root, const TrainConfig& config) {
    if (records.empty()) throw DataError("train_model: empty record list");
    if (config.steps < 1 || config.batch_size < 1)
        throw DataError("train_model: steps and batch_size must be positive");
    fs::create_directories(config.out_dir);

    // decode every sample once up front; desk-scale sets fit in memory
    std::vector<BiTemporalSample> samples;
    samples.reserve(records.size());
    for (const auto& r : records) samples.push_back(load_sample(r, data_root));

    NamedParams params = model.named_params();
    Adam opt;
    opt.lr = config.lr;
    opt.init(params);

    std::mt19937_64 order_rng(config.seed);
    Rng drop_rng(config.seed ^ 0x5bf0a8f1d2c3e4b5ULL);

    // Shuffle at the granularity of image pairs: records that share a
    // bi-temporal scene (several prompts over the same images) stay adjacent,
    // so small batches see contrasting prompts on identical imagery. That
    // keeps a direct discrimination signal in nearly every step instead of
    // leaving prompt routing to sampling luck.
    std::vector<std::vector<size_t>> groups;
    {
        std::map<std::pair<std::string, std::string>, size_t> key_to_group;
        for (size_t i = 0; i < records.size(); ++i) {
            auto key = std::make_pair(records[i].image_t1, records[i].image_t2);
            auto [it, inserted] = key_to_group.try_emplace(key, groups.size());
            if (inserted) groups.emplace_back();
            groups[it->second].push_back(i);
        }
    }
    std::vector<size_t> order;
    order.reserve(samples.size());
    size_t cursor = 0;
    auto reshuffle = [&] {
        std::shuffle(groups.begin(), groups.end(), order_rng);
        order.clear();
        for (const auto& g : groups) order.insert(order.end(), g.begin(), g.end());
        cursor = 0;
    };

    std::string csv_path = (fs::path(config.out_dir) / "loss.csv").string();
    std::ofstream csv(csv_path);
    if (!csv) throw DataError("train_model: cannot open " + csv_path);
    csv << "step,l_cd,l_sep,l_content,l_rec,total\n";

    TrainResult result;
    for (int step = 1; step <= config.steps; ++step) {
        if (config.lr_min >= 0.0 && config.steps > 1) {
            double frac = static_cast<double>(step - 1) / (config.steps - 1);
            opt.lr = config.lr_min +
                     0.5 * (config.lr - config.lr_min) * (1.0 + std::cos(M_PI * frac));
        }
        std::vector<Var> totals;
        double cd = 0, sep = 0, cont = 0, rec = 0;
        for (int b = 0; b < config.batch_size; ++b) {
            if (cursor >= order.size()) reshuffle();
            const BiTemporalSample& s = samples[order[cursor++]];
            LossReport lr = sample_loss(model, s, true, &drop_rng);
            totals.push_back(lr.total);
            cd += lr.cd();
            sep += lr.sep();
            cont += lr.content();
            rec += lr.rec();
        }
        Var batch_total = totals[0];
        for (size_t i = 1; i < totals.size(); ++i) batch_total = add(batch_total, totals[i]);
        batch_total = scale(batch_total, 1.0 / config.batch_size);
        double tv = batch_total->v.data[0];
        if (!std::isfinite(tv))
            throw NumericError("train_model: non-finite batch loss at step " +
                               std::to_string(step));

        for (auto& [name, p] : params) p->zero_grad();
        backward(batch_total);
        opt.step(params);

        double n = config.batch_size;
        csv << step << "," << cd / n << "," << sep / n << "," << cont / n << "," << rec / n << ","
            << tv << "\n";
        if (config.log_every > 0 && step % config.log_every == 0)
            std::cerr << "[omnicd] step " << step << " loss " << tv << "\n";
        if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0)
            save_checkpoint(model,
                            (fs::path(config.out_dir) / ("step_" + std::to_string(step) + ".ckpt"))
                                .string());
        result.final_total = tv;
    }
    result.checkpoint_path = (fs::path(config.out_dir) / "model.ckpt").string();
    save_checkpoint(model, result.checkpoint_path);
    result.loss_csv_path = csv_path;
    return result;
}

namespace {
Tensor threshold_map(const Tensor& prob, double thr) {
    Tensor out(Shape{prob.dim(1), prob.dim(2)});
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] = prob.data[i] >= thr ? 1.0 : 0.0;
    return out;
}
}  // namespace

EvalResult evaluate_model(const Model& model, const std::vector<SampleRecord>& records,
                          const std::string& data_root, double threshold) {
    if (records.empty()) throw DataError("evaluate_model: empty record list");
    EvalResult res;
    std::ostringstream csv;
    csv << "id,precision,recall,f1,iou,acc\n";
    for (const auto& rec : records) {
        BiTemporalSample s = load_sample(rec, data_root);
        ModelOutputs out = model.forward(s.image1, s.image2, s.prompt);
        Tensor pred = threshold_map(out.filtered_prob->v, threshold);
        ConfusionCounts c = confusion(pred, s.mask);
        res.counts.tp += c.tp;
        res.counts.fp += c.fp;
        res.counts.fn += c.fn;
        res.counts.tn += c.tn;
        MetricReport r = metrics(c);
        csv << rec.id << "," << r.precision << "," << r.recall << "," << r.f1 << "," << r.iou
            << "," << r.acc << "\n";
    }
    res.overall = metrics(res.counts);
    res.per_sample_csv = csv.str();
    return res;
}

void infer_to_dir(const Model& model, const BiTemporalSample& s, const std::string& out_dir,
                  double threshold) {
    fs::create_directories(out_dir);
    ModelOutputs out = model.forward(s.image1, s.image2, s.prompt);
    Tensor prob = out.filtered_prob->v;
    Tensor prob2(Shape{prob.dim(1), prob.dim(2)});
    prob2.data = prob.data;
    Tensor roi = out.roi.data->v;
    Tensor roi2(Shape{roi.dim(1), roi.dim(2)});
    roi2.data = roi.data;
    cv::imwrite((fs::path(out_dir) / "mask.png").string(),
                tensor_to_mask(threshold_map(prob, threshold)));
    cv::imwrite((fs::path(out_dir) / "prob.png").string(), prob_to_gray(prob2));
    cv::imwrite((fs::path(out_dir) / "roi.png").string(), prob_to_gray(roi2));
}

}  // namespace omnicd
