#include "omnicd/datakit.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>

#include "omnicd/errors.hpp"
#include "omnicd/prompting.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace omnicd {

cv::Mat standardize_binary(const cv::Mat& label) {
    if (label.type() != CV_8UC1) throw DataError("standardize_binary: expected 8-bit single channel");
    std::set<int> values;
    for (int y = 0; y < label.rows; ++y)
        for (int x = 0; x < label.cols; ++x) values.insert(label.at<std::uint8_t>(y, x));
    if (values.size() > 2)
        throw DataError(
            "standardize_binary: label has more than two values; use a multi-type kind");
    if (values.size() == 2 && !values.count(0))
        throw DataError("standardize_binary: two-valued label without a 0 background");
    cv::Mat out;
    cv::threshold(label, out, 0, 255, cv::THRESH_BINARY);
    return out;
}

std::vector<std::pair<cv::Mat, std::vector<std::string>>> expand_multiclass_single(
    const cv::Mat& label, const std::map<int, std::string>& class_map, int max_subset) {
    if (label.type() != CV_8UC1) throw DataError("expand_multiclass_single: expected 8UC1");
    std::set<int> present;
    for (int y = 0; y < label.rows; ++y)
        for (int x = 0; x < label.cols; ++x) {
            int v = label.at<std::uint8_t>(y, x);
            if (v != 0) present.insert(v);
        }
    for (int v : present)
        if (!class_map.count(v))
            throw DataError("expand_multiclass_single: unmapped pixel value " + std::to_string(v));

    std::vector<int> vals(present.begin(), present.end());
    int k = static_cast<int>(vals.size());
    auto mask_for = [&](const std::vector<int>& subset) {
        cv::Mat m = cv::Mat::zeros(label.size(), CV_8UC1);
        for (int y = 0; y < label.rows; ++y)
            for (int x = 0; x < label.cols; ++x) {
                int v = label.at<std::uint8_t>(y, x);
                if (v != 0 && std::find(subset.begin(), subset.end(), v) != subset.end())
                    m.at<std::uint8_t>(y, x) = 255;
            }
        return m;
    };
    auto classes_of = [&](const std::vector<int>& subset) {
        std::vector<std::string> cs;
        for (int v : subset) cs.push_back(class_map.at(v));
        return cs;
    };

    std::vector<std::pair<cv::Mat, std::vector<std::string>>> out;
    // subsets by size, lexicographic within size; union appended when larger
    int cap = std::min(max_subset, k);
    for (int size = 1; size <= cap; ++size) {
        std::vector<int> idx(static_cast<size_t>(size));
        for (int i = 0; i < size; ++i) idx[static_cast<size_t>(i)] = i;
        while (true) {
            std::vector<int> subset;
            for (int i : idx) subset.push_back(vals[static_cast<size_t>(i)]);
            out.emplace_back(mask_for(subset), classes_of(subset));
            int i = size - 1;
            while (i >= 0 && idx[static_cast<size_t>(i)] == k - size + i) --i;
            if (i < 0) break;
            ++idx[static_cast<size_t>(i)];
            for (int j = i + 1; j < size; ++j)
                idx[static_cast<size_t>(j)] = idx[static_cast<size_t>(j - 1)] + 1;
        }
    }
    if (k > cap) out.emplace_back(mask_for(vals), classes_of(vals));  // full union
    return out;
}

std::vector<std::pair<cv::Mat, std::pair<std::string, std::string>>> expand_bitemporal_pairs(
    const cv::Mat& label1, const cv::Mat& label2, const std::map<int, std::string>& class_map) {
    if (label1.size() != label2.size())
        throw ShapeError("expand_bitemporal_pairs: label shape mismatch");
    if (label1.type() != CV_8UC1 || label2.type() != CV_8UC1)
        throw DataError("expand_bitemporal_pairs: expected 8UC1 labels");
    std::map<std::pair<int, int>, cv::Mat> masks;
    for (int y = 0; y < label1.rows; ++y)
        for (int x = 0; x < label1.cols; ++x) {
            int a = label1.at<std::uint8_t>(y, x), b = label2.at<std::uint8_t>(y, x);
            if (!class_map.count(a))
                throw DataError("expand_bitemporal_pairs: unmapped value " + std::to_string(a));
            if (!class_map.count(b))
                throw DataError("expand_bitemporal_pairs: unmapped value " + std::to_string(b));
            if (a == b) continue;
            auto key = std::make_pair(a, b);
            auto it = masks.find(key);
            if (it == masks.end())
                it = masks.emplace(key, cv::Mat::zeros(label1.size(), CV_8UC1)).first;
            it->second.at<std::uint8_t>(y, x) = 255;
        }
    std::vector<std::pair<cv::Mat, std::pair<std::string, std::string>>> out;
    for (auto& [key, m] : masks)
        out.emplace_back(m, std::make_pair(class_map.at(key.first), class_map.at(key.second)));
    return out;
}

std::vector<Tile> resize_standard(const cv::Mat& grid, int target, bool is_label) {
    std::vector<Tile> out;
    if (grid.rows > target || grid.cols > target) {
        for (int y0 = 0; y0 < grid.rows; y0 += target)
            for (int x0 = 0; x0 < grid.cols; x0 += target) {
                Tile t;
                t.x0 = x0;
                t.y0 = y0;
                t.valid_w = std::min(target, grid.cols - x0);
                t.valid_h = std::min(target, grid.rows - y0);
                t.padded = t.valid_w < target || t.valid_h < target;
                t.data = cv::Mat::zeros(target, target, grid.type());
                grid(cv::Rect(x0, y0, t.valid_w, t.valid_h))
                    .copyTo(t.data(cv::Rect(0, 0, t.valid_w, t.valid_h)));
                out.push_back(std::move(t));
            }
        return out;
    }
    Tile t;
    t.valid_w = t.valid_h = target;
    if (grid.rows == target && grid.cols == target) {
        t.data = grid.clone();
    } else {
        cv::resize(grid, t.data, cv::Size(target, target), 0, 0,
                   is_label ? cv::INTER_NEAREST : cv::INTER_LINEAR);
    }
    out.push_back(std::move(t));
    return out;
}

// ---- manifest ----

void write_manifest(const std::vector<SampleRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_manifest: cannot open " + path);
    for (const auto& r : records) {
        json j;
        j["id"] = r.id;
        j["image_t1"] = r.image_t1;
        j["image_t2"] = r.image_t2;
        j["mask"] = r.mask;
        j["prompt"] = r.prompt;
        j["source_dataset"] = r.source_dataset;
        j["classes"] = r.classes;
        f << j.dump() << "\n";
    }
}

std::vector<SampleRecord> load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_manifest: cannot open " + path);
    std::vector<SampleRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError("load_manifest: line " + std::to_string(lineno) + ": " + e.what());
        }
        SampleRecord r;
        auto need = [&](const char* k) {
            if (!j.contains(k))
                throw DataError("load_manifest: line " + std::to_string(lineno) +
                                ": missing key '" + k + "'");
        };
        for (const char* k : {"id", "image_t1", "image_t2", "mask", "prompt", "source_dataset",
                              "classes"})
            need(k);
        r.id = j["id"].get<std::string>();
        r.image_t1 = j["image_t1"].get<std::string>();
        r.image_t2 = j["image_t2"].get<std::string>();
        r.mask = j["mask"].get<std::string>();
        r.prompt = j["prompt"].get<std::string>();
        r.source_dataset = j["source_dataset"].get<std::string>();
        r.classes = j["classes"].get<std::vector<std::string>>();
        out.push_back(std::move(r));
    }
    return out;
}

BiTemporalSample load_sample(const SampleRecord& rec, const std::string& root) {
    auto read_img = [&](const std::string& rel) {
        cv::Mat m = cv::imread((fs::path(root) / rel).string(), cv::IMREAD_COLOR);
        if (m.empty()) throw DataError("load_sample: cannot read image " + rel);
        return m;
    };
    cv::Mat mask = cv::imread((fs::path(root) / rec.mask).string(), cv::IMREAD_GRAYSCALE);
    if (mask.empty()) throw DataError("load_sample: cannot read mask " + rec.mask);
    BiTemporalSample s;
    s.image1 = image_to_tensor(read_img(rec.image_t1));
    s.image2 = image_to_tensor(read_img(rec.image_t2));
    s.mask = mask_to_tensor(mask);
    s.prompt = rec.prompt;
    return s;
}

// ---- synthetic data ----

const std::vector<std::string>& synth_classes() {
    static const std::vector<std::string> k = {"red squares", "blue disks"};
    return k;
}

namespace {
bool overlaps(const SynthShape& a, const SynthShape& b, int margin) {
    return !(a.x + a.w + margin <= b.x || b.x + b.w + margin <= a.x ||
             a.y + a.h + margin <= b.y || b.y + b.h + margin <= a.y);
}

void draw_shape(cv::Mat& img, const SynthShape& s, const cv::Scalar& color) {
    if (s.cls >= 0) {
        // Change shapes rasterize in 8x8 blocks so their footprint is exactly
        // representable on the model's 1/8-resolution prediction grid. Disks
        // keep the blocks whose center falls inside the ellipse.
        double cx = s.x + s.w / 2.0, cy = s.y + s.h / 2.0;
        double rx = s.w / 2.0, ry = s.h / 2.0;
        for (int by = s.y; by < s.y + s.h; by += 8)
            for (int bx = s.x; bx < s.x + s.w; bx += 8) {
                if (!s.is_rect) {
                    double dx = (bx + 4.0 - cx) / rx, dy = (by + 4.0 - cy) / ry;
                    if (dx * dx + dy * dy > 1.0) continue;
                }
                cv::rectangle(img, cv::Rect(bx, by, 8, 8), color, cv::FILLED);
            }
    } else if (s.is_rect) {
        cv::rectangle(img, cv::Rect(s.x, s.y, s.w, s.h), color, cv::FILLED);
    } else {
        cv::ellipse(img, cv::Point(s.x + s.w / 2, s.y + s.h / 2),
                    cv::Size(s.w / 2, s.h / 2), 0, 0, 360, color, cv::FILLED);
    }
}
}  // namespace

SynthScene synth_scene(std::mt19937_64& rng, int size) {
    auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    SynthScene sc;
    sc.size = size;
    sc.background = cv::Scalar(uni(70, 170), uni(70, 170), uni(70, 170));
    sc.noise_seed = rng();

    // persistent scenery in neutral colors
    int n_persist = uni(2, 4);
    for (int i = 0; i < n_persist; ++i) {
        SynthShape s;
        s.cls = -1;
        s.is_rect = uni(0, 1) == 0;
        s.w = uni(size / 8, size / 4);
        s.h = uni(size / 8, size / 4);
        s.x = uni(0, size - s.w - 1);
        s.y = uni(0, size - s.h - 1);
        int g = uni(40, 220);
        s.color = cv::Scalar(g, uni(120, 220), uni(40, 120));  // greenish/grayish
        s.epoch = 2;
        sc.shapes.push_back(s);
    }

    // change shapes per class, placed without mutual overlap
    const cv::Scalar class_colors[2] = {cv::Scalar(40, 40, 220), cv::Scalar(220, 60, 40)};
    std::vector<SynthShape> placed;
    for (int cls = 0; cls < 2; ++cls) {
        int n = uni(1, 2);
        for (int i = 0; i < n; ++i) {
            SynthShape s;
            s.cls = cls;
            s.is_rect = cls == 0;  // red squares vs blue disks
            // grid-aligned geometry: multiples of 8 keep mask edges on the
            // prediction-grid boundaries
            int max_cells = std::min(6, size / 8 - 1);
            int min_cells = std::min(4, std::max(3, max_cells));
            int side = 8 * uni(min_cells, std::max(min_cells, max_cells));
            s.w = s.h = side;
            s.color = class_colors[cls];
            s.epoch = uni(0, 1);
            for (int attempt = 0; attempt < 50; ++attempt) {
                s.x = 8 * uni(0, (size - s.w) / 8);
                s.y = 8 * uni(0, (size - s.h) / 8);
                bool ok = true;
                for (const auto& p : placed)
                    if (overlaps(s, p, 4)) {
                        ok = false;
                        break;
                    }
                if (ok) break;
            }
            placed.push_back(s);
            sc.shapes.push_back(s);
        }
    }

    auto gain = [&] { return std::uniform_real_distribution<double>(0.90, 1.10)(rng); };
    auto bias = [&] { return std::uniform_real_distribution<double>(-10.0, 10.0)(rng); };
    sc.jitter_gain = cv::Scalar(gain(), gain(), gain());
    sc.jitter_bias = cv::Scalar(bias(), bias(), bias());
    return sc;
}

cv::Mat render_epoch(const SynthScene& sc, int epoch) {
    cv::Mat img(sc.size, sc.size, CV_8UC3, sc.background);
    // shared ground texture
    std::mt19937_64 nrng(sc.noise_seed);
    std::uniform_int_distribution<int> noise(-6, 6);
    for (int y = 0; y < sc.size; ++y)
        for (int x = 0; x < sc.size; ++x) {
            auto& px = img.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c)
                px[static_cast<int>(c)] = static_cast<std::uint8_t>(
                    std::clamp(px[static_cast<int>(c)] + noise(nrng), 0, 255));
        }
    for (const auto& s : sc.shapes)
        if (s.epoch == 2) draw_shape(img, s, s.color);
    for (const auto& s : sc.shapes)
        if (s.epoch == epoch) draw_shape(img, s, s.color);
    if (epoch == 1) {
        for (int y = 0; y < sc.size; ++y)
            for (int x = 0; x < sc.size; ++x) {
                auto& px = img.at<cv::Vec3b>(y, x);
                for (int c = 0; c < 3; ++c)
                    px[c] = static_cast<std::uint8_t>(std::clamp(
                        static_cast<int>(std::lround(px[c] * sc.jitter_gain[c] +
                                                     sc.jitter_bias[c])),
                        0, 255));
            }
    }
    return img;
}

cv::Mat render_class_mask(const SynthScene& sc, int cls) {
    cv::Mat m = cv::Mat::zeros(sc.size, sc.size, CV_8UC1);
    for (const auto& s : sc.shapes)
        if (s.cls == cls && s.epoch != 2) draw_shape(m, s, cv::Scalar(255));
    return m;
}

std::vector<SampleRecord> synth_generate(int n, std::uint64_t seed, int size,
                                         const std::string& out_dir) {
    if (n < 1) throw DataError("synth_generate: n must be >= 1");
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");
    std::mt19937_64 rng(seed);
    std::vector<SampleRecord> records;
    int scene_idx = 0;
    while (static_cast<int>(records.size()) < n) {
        SynthScene sc = synth_scene(rng, size);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "scene_%04d", scene_idx);
        std::string base(buf);
        cv::Mat t1 = render_epoch(sc, 0), t2 = render_epoch(sc, 1);
        cv::imwrite((fs::path(out_dir) / "images" / (base + "_t1.png")).string(), t1);
        cv::imwrite((fs::path(out_dir) / "images" / (base + "_t2.png")).string(), t2);
        for (int cls = 0; cls < 2 && static_cast<int>(records.size()) < n; ++cls) {
            cv::Mat mask = render_class_mask(sc, cls);
            std::string mask_rel = "masks/" + base + "_cls" + std::to_string(cls) + ".png";
            cv::imwrite((fs::path(out_dir) / mask_rel).string(), mask);
            SampleRecord r;
            r.id = base + "_cls" + std::to_string(cls);
            r.image_t1 = "images/" + base + "_t1.png";
            r.image_t2 = "images/" + base + "_t2.png";
            r.mask = mask_rel;
            r.prompt = render_prompt(synth_classes()[static_cast<size_t>(cls)], synth_classes());
            r.source_dataset = "synth";
            r.classes = {synth_classes()[static_cast<size_t>(cls)]};
            records.push_back(std::move(r));
        }
        ++scene_idx;
    }
    write_manifest(records, (fs::path(out_dir) / "manifest.jsonl").string());
    return records;
}

// ---- raster/tensor bridges ----

Tensor image_to_tensor(const cv::Mat& img) {
    if (img.type() != CV_8UC3) throw DataError("image_to_tensor: expected 8UC3");
    Tensor t(Shape{3, img.rows, img.cols});
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) {
            const auto& px = img.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) t.at3(c, y, x) = px[c] / 255.0;
        }
    return t;
}

cv::Mat tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != 3) throw ShapeError("tensor_to_image: expected [3,H,W]");
    cv::Mat img(t.dim(1), t.dim(2), CV_8UC3);
    for (int y = 0; y < t.dim(1); ++y)
        for (int x = 0; x < t.dim(2); ++x) {
            auto& px = img.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c)
                px[c] = static_cast<std::uint8_t>(
                    std::clamp(static_cast<int>(std::lround(t.at3(c, y, x) * 255.0)), 0, 255));
        }
    return img;
}

Tensor mask_to_tensor(const cv::Mat& mask) {
    if (mask.type() != CV_8UC1) throw DataError("mask_to_tensor: expected 8UC1");
    Tensor t(Shape{mask.rows, mask.cols});
    for (int y = 0; y < mask.rows; ++y)
        for (int x = 0; x < mask.cols; ++x) {
            std::uint8_t v = mask.at<std::uint8_t>(y, x);
            if (v != 0 && v != 255) throw DataError("mask_to_tensor: mask value not in {0,255}");
            t.data[static_cast<std::int64_t>(y) * mask.cols + x] = v ? 1.0 : 0.0;
        }
    return t;
}

cv::Mat tensor_to_mask(const Tensor& t) {
    if (t.ndim() != 2) throw ShapeError("tensor_to_mask: expected [H,W]");
    cv::Mat m(t.dim(0), t.dim(1), CV_8UC1);
    for (int y = 0; y < t.dim(0); ++y)
        for (int x = 0; x < t.dim(1); ++x)
            m.at<std::uint8_t>(y, x) =
                t.data[static_cast<std::int64_t>(y) * t.dim(1) + x] != 0.0 ? 255 : 0;
    return m;
}

cv::Mat prob_to_gray(const Tensor& t) {
    if (t.ndim() != 2) throw ShapeError("prob_to_gray: expected [H,W]");
    cv::Mat m(t.dim(0), t.dim(1), CV_8UC1);
    for (int y = 0; y < t.dim(0); ++y)
        for (int x = 0; x < t.dim(1); ++x)
            m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::clamp(
                static_cast<int>(std::lround(
                    t.data[static_cast<std::int64_t>(y) * t.dim(1) + x] * 255.0)),
                0, 255));
    return m;
}

}  // namespace omnicd
