#pragma once
// Shared test fixtures: the two-by-two example plant with its published gains.

#include "spncs/model.hpp"

namespace fixtures {

inline spncs::PlantParams example_plant(double eps = 0.016) {
    using spncs::Matrix;
    spncs::PlantParams p;
    p.A11 = Matrix{{1e-3, 0}, {0, -1.2}};
    p.A12 = Matrix{{0.37, 0}, {0, 0}};
    p.A21 = Matrix{{0, 0}, {1.1, 0}};
    p.A22 = Matrix{{-0.37, 0}, {-0.37, -4.9}};
    p.B1 = Matrix{{0}, {0.97}};
    p.B2 = Matrix{{0}, {0.1}};
    p.C1s = Matrix{{-0.03, 1.9}};
    p.C2s = Matrix{{-1, 0}};
    p.C2f = Matrix{{0, -1}};
    p.epsilon = eps;
    return p;
}

inline spncs::ObserverGains example_gains(double n1 = 0.02, double n2 = 0.01, double n3 = 0.18) {
    using spncs::Matrix;
    return {Matrix{{n1}, {0}}, Matrix{{0}, {n3}}, Matrix{{-n2}, {-n2}}, Matrix{{0}, {0}}};
}

}  // namespace fixtures
