#pragma once
// Relative difference prior (a log-prior: higher is smoother):
//   R(x) = - sum over unordered neighbour pairs {j,k} of
//          (x_j - x_k)^2 / (x_j + x_k + xi * |x_j - x_k|)
// The gradient is scale-invariant: it depends only on voxel ratios.
// Out-of-domain neighbours reflect onto the voxel itself (zero-flux
// boundary), so their pairs contribute nothing and are skipped.

#include "petsgm/grid.hpp"

namespace petsgm {

struct RdpParams {
    double xi = 1.0;
    double epsilon = 1e-9; // denominator guard, only reachable at 0/0
    bool z_only = false;   // restrict the neighbourhood to the axial direction
};

// Neighbourhood: full 3x3 (2D) / 3x3x3 (3D) box minus the center, or the two
// axial neighbours when z_only.
double rdp(const ImageGrid& x, const RdpParams& params = {});
ImageGrid rdp_grad(const ImageGrid& x, const RdpParams& params = {});

} // namespace petsgm
