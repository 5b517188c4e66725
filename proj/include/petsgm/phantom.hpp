#pragma once
// Procedural ellipse/ellipsoid phantoms with paired emission (PET-like) and
// structural (MR-like) contrasts sharing the same anatomy, plus optional
// focal lesions restricted to the uniform soft-tissue compartment so lesion
// contrast is exact by construction. Geometry jitter produces datasets of
// distinct samples from one base description.

#include <cstdint>
#include <vector>

#include "petsgm/grid.hpp"
#include "petsgm/rng.hpp"

namespace petsgm {

// Centers/axes in normalized coordinates: the grid spans [-1,1] per axis.
struct Ellipse {
    double cx = 0.0, cy = 0.0, cz = 0.0;
    double ax = 0.5, ay = 0.5, az = 1.0;
    double angle_rad = 0.0; // in-plane rotation
    double pet = 0.0;       // emission intensity painted inside
    double mr = 0.0;        // structural intensity painted inside
};

struct LesionSpec {
    int count = 0;
    double radius_min = 0.08, radius_max = 0.16; // normalized units
    double contrast = 4.0;                       // multiplies soft-tissue value
};

struct PhantomSpec {
    int nx = 32, ny = 32, nz = 1;
    double sx = 1.0, sy = 1.0, sz = 1.0;
    std::vector<Ellipse> ellipses; // painted in order; later entries overwrite
    double soft_tissue_value = 0.25; // emission value of the lesionable compartment
    LesionSpec lesions;
};

struct PairedSample {
    ImageGrid pet;
    ImageGrid mr;
    ImageGrid lesion_mask; // 1 inside lesions, else 0
};

// Brain-like default: gray-matter shell (emission 1.0), soft-tissue/white
// interior (0.25), small low-emission ventricle. MR swaps the gray/white
// contrast so the two modalities share boundaries but not intensities.
PhantomSpec default_brain_spec(int nx, int ny, int nz = 1);

// rng drives lesion placement only; the base anatomy is deterministic.
PairedSample generate_phantom(const PhantomSpec& spec, RngStream rng);

// n jittered, pairwise-distinct samples (centers/axes/angles perturbed).
std::vector<PairedSample> build_dataset(const PhantomSpec& base, int n, std::uint64_t seed);

} // namespace petsgm
