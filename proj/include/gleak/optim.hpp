#ifndef GLEAK_OPTIM_HPP
#define GLEAK_OPTIM_HPP

#include <cmath>
#include <map>
#include <string>

#include "gleak/errors.hpp"
#include "gleak/tensor.hpp"

namespace gleak {

// Adam with bias correction. The learning rate is passed per step so callers
// can drive any external decay schedule; beta/eps defaults are the usual ones.
template <class T>
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(std::map<std::string, Tensor<T>>& params,
              const std::map<std::string, Tensor<T>>& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, double(t_));
        const double c2 = 1.0 - std::pow(b2_, double(t_));
        for (auto& [name, p] : params) {
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            const Tensor<T>& g = git->second;
            if (!g.same_shape(p)) throw ShapeError("Adam: gradient shape mismatch for " + name);
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.numel() != p.numel()) m = Tensor<T>::zeros(p.shape);
            if (v.numel() != p.numel()) v = Tensor<T>::zeros(p.shape);
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double gi = double(g[i]);
                const double mi = b1_ * double(m[i]) + (1.0 - b1_) * gi;
                const double vi = b2_ * double(v[i]) + (1.0 - b2_) * gi * gi;
                m[i] = T(mi);
                v[i] = T(vi);
                p[i] = T(double(p[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + eps_));
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

private:
    double b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, Tensor<T>> m_, v_;
};

} // namespace gleak

#endif
