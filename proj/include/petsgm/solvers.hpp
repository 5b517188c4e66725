#pragma once
// Classical iterative reconstruction: MLEM, ordered-subsets EM, and a
// relaxed block-sequential regularised EM ascent (preconditioned, projected)
// for the penalised objective  PLL(y|x) + lambda * RDP(x).

#include <cstdint>
#include <vector>

#include "petsgm/grid.hpp"
#include "petsgm/projector.hpp"
#include "petsgm/rdp.hpp"

namespace petsgm {

// x <- max(0, x + alpha * max(x, delta)/sens * grad), on support voxels only.
// Shared by the classical solver and the diffusion samplers' inner updates so
// equivalence between the two is exact.
void preconditioned_ascent_step(ImageGrid& x, const ImageGrid& grad, const ImageGrid& sens,
                                const std::vector<std::uint8_t>& support, double delta, double alpha);

// Default preconditioner floor: 1e-4 times the mean of the nonzero voxels of
// the starting image (0 if the image is identically zero). Shared by the
// regularised solver and the sampler inner updates.
double preconditioner_floor(const ImageGrid& init);

ImageGrid mlem(const Measurements& y, const SystemModel& sm, const ImageGrid& init, int n_iter);
ImageGrid osem(const Measurements& y, const SystemModel& sm, const SubsetSchedule& sched,
               const ImageGrid& init, int n_epochs);

// One OSEM epoch from a constant image; the default starting point for the
// regularised solver and the sampler-side normalisation.
ImageGrid osem_one_epoch_from_constant(const Measurements& y, const SystemModel& sm, int n_sub,
                                       double init_value = 1.0);

struct BsremParams {
    int n_sub = 4;
    double lambda = 0.0; // RDP weight
    RdpParams rdp;
    double alpha0 = 1.0;
    double zeta = 0.1;           // relaxation: alpha_epoch = alpha0 / (zeta*epoch + 1)
    double delta = -1.0;         // preconditioner floor; <0 derives 1e-4 * mean nonzero init
    double stop_rel_change = 1e-4; // mean |change| over nonzero voxels, relative
    int max_epochs = 500;
};

struct BsremResult {
    ImageGrid x;
    int epochs = 0;
    bool converged = false;
    double delta = 0.0;
    std::vector<double> objective; // per epoch, PLL + lambda*RDP
};

// init == nullptr uses one OSEM epoch from a constant image.
BsremResult bsrem(const Measurements& y, const SystemModel& sm, const BsremParams& params,
                  const ImageGrid* init = nullptr);

// First-order stationarity measure for the projected, preconditioned solver:
// the norm of the unit-step gradient mapping ||x - P_{>=0}(x + D(x) grad)||,
// with D the BSREM preconditioner (floor derived from x). It is zero exactly
// on the KKT set of the MAP objective: interior voxels need a vanishing
// gradient, voxels at the bound only a non-positive one. The raw Euclidean
// gradient norm is not usable here: voxels approaching the bound carry their
// full gradient magnitude until they reach it exactly, which the vanishing
// preconditioner only lets them do asymptotically.
double projected_gradient_norm(const Measurements& y, const SystemModel& sm, const ImageGrid& x,
                               double lambda, const RdpParams& rdp_params);

} // namespace petsgm
