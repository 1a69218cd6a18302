#pragma once

#include <atomic>
#include <functional>

#include "pvp/error.hpp"

namespace pvp {

// Progress callback and cooperative cancellation flag for long-running stages.
struct JobControl {
    std::function<void(double, double)> on_progress;  // (fraction of the current stage in [0,1], current loss)
    const std::atomic<bool>* cancel = nullptr;

    void check() const {
        if (cancel != nullptr && cancel->load()) throw Error(ErrorKind::Cancelled, "cancelled");
    }
    void report(double fraction, double loss = 0.0) const {
        if (on_progress) on_progress(fraction, loss);
    }
};

}  // namespace pvp
