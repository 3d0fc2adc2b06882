#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "omnicd/checkpoint.hpp"
#include "omnicd/datakit.hpp"
#include "omnicd/errors.hpp"
#include "omnicd/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace omnicd;

namespace {

ModelConfig load_config(const std::string& path) {
    if (path.empty()) return ModelConfig{};
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return ModelConfig::from_json(text);
}

std::map<int, std::string> load_class_map(const std::string& path) {
    std::map<int, std::string> out;
    if (path.empty()) return out;
    std::ifstream f(path);
    if (!f) throw DataError("cannot open class map " + path);
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError("class map must be a JSON object");
    for (auto& [k, v] : j.items()) out[std::stoi(k)] = v.get<std::string>();
    return out;
}

std::vector<std::string> registry_of(const std::map<int, std::string>& cm) {
    std::vector<std::string> r;
    for (const auto& [k, v] : cm) r.push_back(v);
    return r;
}

cv::Mat read_color(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw DataError("cannot read image " + path);
    return m;
}

cv::Mat read_gray(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw DataError("cannot read label " + path);
    return m;
}

Tensor load_image_as(const std::string& path, int size) {
    cv::Mat m = read_color(path);
    if (m.rows != size || m.cols != size)
        cv::resize(m, m, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    return image_to_tensor(m);
}

// ---- convert ----

struct ConvertArgs {
    std::string kind = "single_binary";
    std::string class_map_path;
    int target = 512;
    int max_subset = 2;
    std::string in_dir, out_dir, dataset_name;
};

void emit_tiled(const cv::Mat& img1, const cv::Mat& img2, const cv::Mat& mask,
                const std::string& id, const std::string& prompt,
                const std::vector<std::string>& classes, const std::string& dataset, int target,
                const std::string& out_dir, std::vector<SampleRecord>& records) {
    auto t1 = resize_standard(img1, target, false);
    auto t2 = resize_standard(img2, target, false);
    auto tm = resize_standard(mask, target, true);
    for (size_t i = 0; i < tm.size(); ++i) {
        std::string tid = tm.size() > 1 ? id + "_tile" + std::to_string(i) : id;
        SampleRecord r;
        r.id = tid;
        r.image_t1 = "images/" + tid + "_t1.png";
        r.image_t2 = "images/" + tid + "_t2.png";
        r.mask = "masks/" + tid + ".png";
        r.prompt = prompt;
        r.source_dataset = dataset;
        r.classes = classes;
        cv::imwrite((fs::path(out_dir) / r.image_t1).string(), t1[i].data);
        cv::imwrite((fs::path(out_dir) / r.image_t2).string(), t2[i].data);
        cv::imwrite((fs::path(out_dir) / r.mask).string(), tm[i].data);
        records.push_back(std::move(r));
    }
}

int run_convert(const ConvertArgs& a) {
    auto class_map = load_class_map(a.class_map_path);
    auto registry = registry_of(class_map);
    std::string dataset = a.dataset_name.empty() ? fs::path(a.in_dir).filename().string()
                                                 : a.dataset_name;
    fs::create_directories(fs::path(a.out_dir) / "images");
    fs::create_directories(fs::path(a.out_dir) / "masks");

    fs::path t1_dir = fs::path(a.in_dir) / "t1";
    if (!fs::is_directory(t1_dir)) throw DataError("convert: missing directory " + t1_dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(t1_dir))
        if (e.is_regular_file()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw DataError("convert: no images under " + t1_dir.string());

    std::vector<SampleRecord> records;
    for (const auto& name : names) {
        std::string stem = fs::path(name).stem().string();
        cv::Mat img1 = read_color((fs::path(a.in_dir) / "t1" / name).string());
        cv::Mat img2 = read_color((fs::path(a.in_dir) / "t2" / name).string());
        if (a.kind == "single_binary") {
            cv::Mat label = read_gray((fs::path(a.in_dir) / "label" / name).string());
            cv::Mat mask = standardize_binary(label);
            std::string cls = registry.empty() ? "changed areas" : registry.front();
            std::vector<std::string> reg = registry.empty() ? std::vector<std::string>{cls}
                                                            : registry;
            emit_tiled(img1, img2, mask, stem, render_prompt(cls, reg), {cls}, dataset, a.target,
                       a.out_dir, records);
        } else if (a.kind == "multi_single") {
            cv::Mat label = read_gray((fs::path(a.in_dir) / "label" / name).string());
            auto expanded = expand_multiclass_single(label, class_map, a.max_subset);
            int vi = 0;
            for (auto& [mask, classes] : expanded) {
                std::string id = stem + "_v" + std::to_string(vi++);
                emit_tiled(img1, img2, mask, id, render_prompt(classes, registry), classes,
                           dataset, a.target, a.out_dir, records);
            }
        } else if (a.kind == "multi_bitemporal") {
            cv::Mat l1 = read_gray((fs::path(a.in_dir) / "label_t1" / name).string());
            cv::Mat l2 = read_gray((fs::path(a.in_dir) / "label_t2" / name).string());
            auto expanded = expand_bitemporal_pairs(l1, l2, class_map);
            int vi = 0;
            for (auto& [mask, pair] : expanded) {
                std::string id = stem + "_v" + std::to_string(vi++);
                emit_tiled(img1, img2, mask, id, render_prompt(pair, registry),
                           {pair.first, pair.second}, dataset, a.target, a.out_dir, records);
            }
        } else {
            throw UsageError("convert: unknown kind " + a.kind);
        }
    }
    write_manifest(records, (fs::path(a.out_dir) / "manifest.jsonl").string());
    std::cout << records.size() << " records written to " << a.out_dir << "\n";
    return 0;
}

std::vector<SampleRecord> manifest_with_root(const std::string& manifest, std::string& root) {
    if (root.empty()) root = fs::path(manifest).parent_path().string();
    if (root.empty()) root = ".";
    return load_manifest(manifest);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prompt-guided bi-temporal change detection"};
    app.require_subcommand(1);

    ConvertArgs ca;
    auto* convert = app.add_subcommand("convert", "Standardize a dataset into the unified format");
    convert->add_option("--kind", ca.kind, "single_binary | multi_single | multi_bitemporal");
    convert->add_option("--class-map", ca.class_map_path, "JSON: pixel value -> class name");
    convert->add_option("--target", ca.target, "Output resolution");
    convert->add_option("--max-subset", ca.max_subset, "Multi-class subset size cap");
    convert->add_option("--in", ca.in_dir, "Input dir with t1/, t2/ and label dirs")->required();
    convert->add_option("--out", ca.out_dir, "Output dir")->required();
    convert->add_option("--dataset-name", ca.dataset_name, "source_dataset field override");

    int synth_n = 64, synth_size = 128;
    std::uint64_t synth_seed = 42;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--n", synth_n, "Record count");
    synth->add_option("--seed", synth_seed, "RNG seed");
    synth->add_option("--size", synth_size, "Image side");
    synth->add_option("--out", synth_out, "Output dir")->required();

    std::string tr_manifest, tr_root, tr_config, tr_out = "run", tr_init;
    TrainConfig tc;
    tc.lr = 1e-4;
    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--manifest", tr_manifest, "JSON-lines manifest")->required();
    train->add_option("--root", tr_root, "Data root (default: manifest dir)");
    train->add_option("--config", tr_config, "Model config JSON");
    train->add_option("--steps", tc.steps, "Optimizer steps");
    train->add_option("--batch", tc.batch_size, "Batch size");
    train->add_option("--lr", tc.lr, "Learning rate");
    train->add_option("--lr-min", tc.lr_min,
                      "Enable cosine decay from --lr down to this value");
    train->add_option("--seed", tc.seed, "RNG seed");
    train->add_option("--checkpoint-every", tc.checkpoint_every, "Periodic checkpoint interval");
    train->add_option("--out", tr_out, "Output dir");
    train->add_option("--init", tr_init, "Checkpoint to initialize from");

    std::string ev_manifest, ev_root, ev_ckpt, ev_out;
    double ev_threshold = 0.5;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--manifest", ev_manifest, "JSON-lines manifest")->required();
    eval->add_option("--root", ev_root, "Data root (default: manifest dir)");
    eval->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required();
    eval->add_option("--threshold", ev_threshold, "Binarization threshold");
    eval->add_option("--out", ev_out, "Dir for metrics.json and per_sample.csv");

    std::string in_t1, in_t2, in_ckpt, in_prompt, in_out = "infer_out";
    std::vector<std::string> in_ref;
    double in_threshold = 0.5;
    auto* infer = app.add_subcommand("infer", "Run one bi-temporal pair");
    infer->add_option("--t1", in_t1, "Epoch-1 image")->required();
    infer->add_option("--t2", in_t2, "Epoch-2 image")->required();
    infer->add_option("--checkpoint", in_ckpt, "Model checkpoint")->required();
    infer->add_option("--prompt-text", in_prompt, "Textual prompt");
    infer->add_option("--prompt-ref", in_ref, "Reference image and mask")->expected(2);
    infer->add_option("--threshold", in_threshold, "Binarization threshold");
    infer->add_option("--out", in_out, "Output dir");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*convert) return run_convert(ca);
        if (*synth) {
            auto records = synth_generate(synth_n, synth_seed, synth_size, synth_out);
            std::cout << records.size() << " records written to " << synth_out << "\n";
            return 0;
        }
        if (*train) {
            auto records = manifest_with_root(tr_manifest, tr_root);
            ModelConfig cfg = load_config(tr_config);
            tc.out_dir = tr_out;
            Model model = tr_init.empty() ? Model(cfg, tc.seed) : load_checkpoint(tr_init);
            TrainResult r = train_model(model, records, tr_root, tc);
            std::cout << "final loss " << r.final_total << "\ncheckpoint " << r.checkpoint_path
                      << "\n";
            return 0;
        }
        if (*eval) {
            auto records = manifest_with_root(ev_manifest, ev_root);
            Model model = load_checkpoint(ev_ckpt);
            EvalResult r = evaluate_model(model, records, ev_root, ev_threshold);
            std::cout << r.overall.to_json() << "\n";
            if (!ev_out.empty()) {
                fs::create_directories(ev_out);
                std::ofstream(fs::path(ev_out) / "metrics.json") << r.overall.to_json() << "\n";
                std::ofstream(fs::path(ev_out) / "per_sample.csv") << r.per_sample_csv;
            }
            return 0;
        }
        if (*infer) {
            if (in_prompt.empty() == in_ref.empty())
                throw UsageError("infer: give exactly one of --prompt-text or --prompt-ref");
            Model model = load_checkpoint(in_ckpt);
            int s = model.cfg.input_size;
            BiTemporalSample sample;
            sample.image1 = load_image_as(in_t1, s);
            sample.image2 = load_image_as(in_t2, s);
            if (!in_prompt.empty()) {
                sample.prompt = in_prompt;
                infer_to_dir(model, sample, in_out, in_threshold);
            } else {
                ReferencePrompt ref;
                ref.image = load_image_as(in_ref[0], s);
                cv::Mat m = read_gray(in_ref[1]);
                if (m.rows != s || m.cols != s)
                    cv::resize(m, m, cv::Size(s, s), 0, 0, cv::INTER_NEAREST);
                cv::threshold(m, m, 0, 255, cv::THRESH_BINARY);
                ref.mask = mask_to_tensor(m);
                ConfidenceMap conf =
                    reference_confidence(ref, sample.image2, model.image_enc);
                ModelOutputs out = model.forward(sample.image1, sample.image2, conf);
                fs::create_directories(in_out);
                Tensor prob = out.filtered_prob->v;
                Tensor prob2(Shape{prob.dim(1), prob.dim(2)});
                prob2.data = prob.data;
                Tensor thr(prob2.shape);
                for (std::int64_t i = 0; i < thr.numel(); ++i)
                    thr.data[i] = prob2.data[i] >= in_threshold ? 1.0 : 0.0;
                Tensor roi = out.roi.data->v;
                Tensor roi2(Shape{roi.dim(1), roi.dim(2)});
                roi2.data = roi.data;
                cv::imwrite((fs::path(in_out) / "mask.png").string(), tensor_to_mask(thr));
                cv::imwrite((fs::path(in_out) / "prob.png").string(), prob_to_gray(prob2));
                cv::imwrite((fs::path(in_out) / "roi.png").string(), prob_to_gray(roi2));
            }
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
