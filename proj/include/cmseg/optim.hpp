// SPDX-License-Identifier: Apache-2.0
#ifndef CMSEG_OPTIM_HPP
#define CMSEG_OPTIM_HPP

#include <cstdint>
#include <string>

#include "cmseg/nets.hpp"

namespace cmseg {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over a named parameter map. Only parameters that received a gradient
// are touched, so disjoint sub-networks can share one map without cross-talk.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    // p -= lr_scale * lr * mhat / (sqrt(vhat) + eps). Moments are created on
    // first use per tensor.
    void step(ParamMap& params, const ParamMap& grads, double lr_scale = 1.0);

    std::int64_t t() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    // Serializes/restores moments under "opt/<group>/{m,v}/<name>" plus the
    // step counter "opt/<group>/t".
    void export_state(ParamMap& out, const std::string& group) const;
    void import_state(const ParamMap& in, const std::string& group);

private:
    AdamConfig cfg_;
    ParamMap m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace cmseg

#endif
