#pragma once
// File formats:
//  - images / measurements: raw little-endian float32 payload ("<name>.f32")
//    plus a JSON sidecar ("<name>.json") carrying shape and metadata.
//    Payload order matches the in-memory layout documented in grid.hpp.
//  - 8-bit binary PGM (P5) export for quick visual inspection.
//
// Readers validate sidecar/payload consistency and reject non-finite values.

#include <cstdint>
#include <string>
#include <vector>

#include "petsgm/grid.hpp"

namespace petsgm {

// Raw little-endian float32 blob with no sidecar; building block for the
// typed writers below and for network-parameter files.
void write_f32_blob(const std::string& path, const std::vector<double>& values, const std::string& what);
std::vector<double> read_f32_blob(const std::string& path, std::size_t expected, const std::string& what);

// path must end in ".f32"; the sidecar replaces that suffix with ".json".
void write_image(const ImageGrid& img, const std::string& path_f32);
ImageGrid read_image(const std::string& path_f32);

void write_measurements(const Measurements& m, const std::string& path_f32);
Measurements read_measurements(const std::string& path_f32);

// Min/max windows the slice to [0,255]; a constant slice maps to mid-gray 128.
// slice z out of range is an error.
void export_graymap(const ImageGrid& img, int z, const std::string& path_pgm);

// FNV-1a over the raw bytes of a file, hex-encoded; used in run manifests.
std::string content_hash_file(const std::string& path);

} // namespace petsgm
