#pragma once

#include <Eigen/Dense>

namespace tsas {

/// One classical fourth-order Runge-Kutta step of dy/dt = f(t, y).
template <class Derivative>
Eigen::VectorXd rk4_advance(const Eigen::VectorXd& y, double t, double dt, Derivative&& f) {
    const Eigen::VectorXd k1 = f(t, y);
    const Eigen::VectorXd k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = f(t + dt, y + dt * k3);
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace tsas
