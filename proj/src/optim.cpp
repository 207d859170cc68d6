// SPDX-License-Identifier: Apache-2.0
#include "cmseg/optim.hpp"

#include <cmath>

#include "cmseg/errors.hpp"

namespace cmseg {

void Adam::step(ParamMap& params, const ParamMap& grads, double lr_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const double rate = cfg_.lr * lr_scale;
    for (const auto& [name, g] : grads) {
        auto pit = params.find(name);
        if (pit == params.end()) throw RuntimeError("Adam: gradient for unknown parameter " + name);
        Tensor& p = pit->second;
        if (!p.same_shape(g)) throw RuntimeError("Adam: gradient shape mismatch for " + name);
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            mit = m_.emplace(name, Tensor(p.dims)).first;
            v_.emplace(name, Tensor(p.dims));
        }
        Tensor& m = mit->second;
        Tensor& v = v_.at(name);
        for (std::size_t i = 0; i < p.v.size(); ++i) {
            m.v[i] = cfg_.beta1 * m.v[i] + (1.0 - cfg_.beta1) * g.v[i];
            v.v[i] = cfg_.beta2 * v.v[i] + (1.0 - cfg_.beta2) * g.v[i] * g.v[i];
            const double mhat = m.v[i] / bc1;
            const double vhat = v.v[i] / bc2;
            p.v[i] -= rate * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::export_state(ParamMap& out, const std::string& group) const {
    for (const auto& [name, t] : m_) out["opt/" + group + "/m/" + name] = t;
    for (const auto& [name, t] : v_) out["opt/" + group + "/v/" + name] = t;
    Tensor step_t({1});
    step_t.v[0] = double(t_);
    out["opt/" + group + "/t"] = std::move(step_t);
}

void Adam::import_state(const ParamMap& in, const std::string& group) {
    m_.clear();
    v_.clear();
    t_ = 0;
    const std::string mp = "opt/" + group + "/m/";
    const std::string vp = "opt/" + group + "/v/";
    const std::string tp = "opt/" + group + "/t";
    for (const auto& [name, t] : in) {
        if (name.rfind(mp, 0) == 0)
            m_[name.substr(mp.size())] = t;
        else if (name.rfind(vp, 0) == 0)
            v_[name.substr(vp.size())] = t;
        else if (name == tp)
            t_ = static_cast<std::int64_t>(t.v.at(0));
    }
}

}  // namespace cmseg
