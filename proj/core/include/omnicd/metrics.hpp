#pragma once

#include <cstdint>
#include <string>

#include "omnicd/tensor.hpp"

namespace omnicd {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::int64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

struct MetricReport {
    double precision = 0, recall = 0, f1 = 0, iou = 0, acc = 0;
    std::string to_json() const;
};

/// Exact pixel counts. pred/gt in {0,1}; valid (optional, same shape) masks
/// pixels in when nonzero — padded tile regions are excluded this way.
ConfusionCounts confusion(const Tensor& pred, const Tensor& gt, const Tensor* valid = nullptr);

/// P, R, F1, IoU, ACC from counts. When tp+fp+fn == 0 (no change predicted,
/// none present) P=R=F1=IoU=1 by convention.
MetricReport metrics(const ConfusionCounts& c);

}  // namespace omnicd
