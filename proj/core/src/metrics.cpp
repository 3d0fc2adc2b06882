#include "omnicd/metrics.hpp"

#include <json.hpp>

#include "omnicd/errors.hpp"

namespace omnicd {

ConfusionCounts confusion(const Tensor& pred, const Tensor& gt, const Tensor* valid) {
    if (pred.shape != gt.shape) throw ShapeError("confusion: pred/gt shape mismatch");
    if (valid && valid->shape != pred.shape)
        throw ShapeError("confusion: valid mask shape mismatch");
    ConfusionCounts c;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        double p = pred.data[i], g = gt.data[i];
        if ((p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0))
            throw DataError("confusion: non-binary input");
        if (valid && valid->data[i] == 0.0) continue;
        if (p == 1.0 && g == 1.0)
            ++c.tp;
        else if (p == 1.0)
            ++c.fp;
        else if (g == 1.0)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

MetricReport metrics(const ConfusionCounts& c) {
    if (c.total() <= 0) throw DataError("metrics: zero pixels evaluated");
    MetricReport r;
    double tp = static_cast<double>(c.tp);
    if (c.tp + c.fp + c.fn == 0) {
        r.precision = r.recall = r.f1 = r.iou = 1.0;  // empty-change convention
    } else {
        r.precision = c.tp + c.fp ? tp / (c.tp + c.fp) : 0.0;
        r.recall = c.tp + c.fn ? tp / (c.tp + c.fn) : 0.0;
        r.f1 = (r.precision + r.recall) > 0.0
                   ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                   : 0.0;
        r.iou = tp / (c.tp + c.fp + c.fn);
    }
    r.acc = static_cast<double>(c.tp + c.tn) / c.total();
    return r;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["precision"] = precision;
    j["recall"] = recall;
    j["f1"] = f1;
    j["iou"] = iou;
    j["acc"] = acc;
    return j.dump();
}

}  // namespace omnicd
