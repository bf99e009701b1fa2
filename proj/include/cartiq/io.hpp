#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cartiq/volume.hpp"

namespace cartiq {

// Self-describing little-endian container, extensions .mev (volume),
// .msk (mask), .pmap (probability map), .t2m (T2 map). Byte layout:
//
//   char    magic[8] = "CARTIQRC"
//   u32     version  = 1
//   u32     kind       (0 volume, 1 mask, 2 pmap, 3 t2map, 4 float volume)
//   u32     nx, ny, nz, channels
//   f64     dx, dy, dz, tr_ms
//   u32     n_te
//   f64     te_ms[n_te]
//   f32     data[nx*ny*nz*channels]   x fastest, channel slowest
//
// T2 maps use channels = 3 (t2, s0, c); absent voxels are NaN.
enum class ContainerKind : std::uint32_t {
    volume = 0,
    mask = 1,
    pmap = 2,
    t2map = 3,
    float_volume = 4, // e.g. normalized intensities, may be negative
};

struct RawContainer {
    ContainerKind kind = ContainerKind::volume;
    Grid3 grid;
    std::uint32_t channels = 1;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    double tr_ms = 0.0;
    std::vector<double> te_ms;
    std::vector<float> data;
};

RawContainer read_raw_container(const std::filesystem::path& path);
void write_raw_container(const std::filesystem::path& path, const RawContainer& rc);

enum class FileFormat { autodetect, raw_container, nifti };

// Multi-echo NIfTI input is either a 4D .nii/.nii.gz with a sibling .json
// sidecar carrying te_ms (and optionally tr_ms, spacing_mm), or a .json
// manifest with an "echo_files" array of 3D volumes in TE order.
MultiEchoVolume load_multi_echo_volume(const std::filesystem::path& path,
                                       FileFormat format = FileFormat::autodetect);
SegmentationMask load_mask(const std::filesystem::path& path,
                           FileFormat format = FileFormat::autodetect);
ProbabilityMap load_probability_map(const std::filesystem::path& path,
                                    FileFormat format = FileFormat::autodetect);
T2Map load_t2_map(const std::filesystem::path& path);

void write_volume(const std::filesystem::path& path, const MultiEchoVolume& v);
void write_mask(const std::filesystem::path& path, const SegmentationMask& m);
void write_probability_map(const std::filesystem::path& path, const ProbabilityMap& pm,
                           std::array<double, 3> spacing = {1.0, 1.0, 1.0});
void write_t2_map(const std::filesystem::path& path, const T2Map& m,
                  std::array<double, 3> spacing = {1.0, 1.0, 1.0});

// Minimal NIfTI-1 reader: single-file .nii or .nii.gz, common scalar
// dtypes, scl_slope/scl_inter applied. Returns x-fastest data.
struct NiftiImage {
    Grid3 grid;
    int nt = 1; // 4th dimension (echoes) when present
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::vector<float> data;
};

NiftiImage read_nifti(const std::filesystem::path& path);

} // namespace cartiq
