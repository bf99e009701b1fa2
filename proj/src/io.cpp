#include "cartiq/io.hpp"

#include <zlib.h>

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace cartiq {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'R', 'T', 'I', 'Q', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

// This toolkit targets little-endian hosts; the container is defined LE.
static_assert(std::endian::native == std::endian::little,
              "raw container I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw error(errc::malformed_file, std::string("truncated reading ") + what);
    return v;
}

std::string lower_ext(const std::filesystem::path& path) {
    std::string e = path.extension().string();
    for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e;
}

FileFormat detect_format(const std::filesystem::path& path) {
    std::string e = lower_ext(path);
    if (e == ".mev" || e == ".msk" || e == ".pmap" || e == ".t2m") {
        return FileFormat::raw_container;
    }
    if (e == ".nii" || e == ".gz" || e == ".json") return FileFormat::nifti;
    // fall back to sniffing the magic
    std::ifstream is(path, std::ios::binary);
    char m[8] = {};
    is.read(m, 8);
    if (is && std::memcmp(m, kMagic, 8) == 0) return FileFormat::raw_container;
    return FileFormat::nifti;
}

} // namespace

RawContainer read_raw_container(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw error(errc::malformed_file, "cannot open " + path.string());

    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw error(errc::malformed_file, "bad magic in " + path.string());
    }
    auto version = get<std::uint32_t>(is, "version");
    if (version != kVersion) {
        throw error(errc::malformed_file, "unsupported container version " +
                                              std::to_string(version));
    }

    RawContainer rc;
    auto kind = get<std::uint32_t>(is, "kind");
    if (kind > 4) throw error(errc::malformed_file, "unknown container kind");
    rc.kind = static_cast<ContainerKind>(kind);

    auto nx = get<std::uint32_t>(is, "nx");
    auto ny = get<std::uint32_t>(is, "ny");
    auto nz = get<std::uint32_t>(is, "nz");
    rc.channels = get<std::uint32_t>(is, "channels");
    if (nx == 0 || ny == 0 || nz == 0 || rc.channels == 0 ||
        nx > (1u << 24) || ny > (1u << 24) || nz > (1u << 24)) {
        throw error(errc::invalid_geometry, "bad dims in " + path.string());
    }
    rc.grid = Grid3{static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz)};

    for (int a = 0; a < 3; ++a) rc.spacing_mm[a] = get<double>(is, "spacing");
    rc.tr_ms = get<double>(is, "tr_ms");
    auto n_te = get<std::uint32_t>(is, "n_te");
    if (n_te > (1u << 16)) throw error(errc::malformed_file, "absurd TE count");
    rc.te_ms.resize(n_te);
    for (auto& te : rc.te_ms) te = get<double>(is, "te");

    std::size_t n = rc.grid.voxels() * rc.channels;
    rc.data.resize(n);
    is.read(reinterpret_cast<char*>(rc.data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw error(errc::malformed_file, "truncated payload in " + path.string());
    // must be exactly at EOF
    char extra;
    is.read(&extra, 1);
    if (is.gcount() != 0) {
        throw error(errc::malformed_file, "trailing bytes after payload in " + path.string());
    }
    return rc;
}

void write_raw_container(const std::filesystem::path& path, const RawContainer& rc) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw error(errc::malformed_file, "cannot write " + path.string());
    os.write(kMagic, 8);
    put(os, kVersion);
    put(os, static_cast<std::uint32_t>(rc.kind));
    put(os, static_cast<std::uint32_t>(rc.grid.nx));
    put(os, static_cast<std::uint32_t>(rc.grid.ny));
    put(os, static_cast<std::uint32_t>(rc.grid.nz));
    put(os, rc.channels);
    for (int a = 0; a < 3; ++a) put(os, rc.spacing_mm[a]);
    put(os, rc.tr_ms);
    put(os, static_cast<std::uint32_t>(rc.te_ms.size()));
    for (double te : rc.te_ms) put(os, te);
    os.write(reinterpret_cast<const char*>(rc.data.data()),
             static_cast<std::streamsize>(rc.data.size() * sizeof(float)));
    if (!os) throw error(errc::malformed_file, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// NIfTI-1

NiftiImage read_nifti(const std::filesystem::path& path) {
    // gzread handles both gzip-compressed and plain files
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw error(errc::malformed_file, "cannot open " + path.string());

    std::vector<unsigned char> buf;
    unsigned char chunk[1 << 16];
    int got;
    while ((got = gzread(f, chunk, sizeof(chunk))) > 0) {
        buf.insert(buf.end(), chunk, chunk + got);
    }
    bool read_error = (got < 0);
    gzclose(f);
    if (read_error) throw error(errc::malformed_file, "decompression failed for " + path.string());

    if (buf.size() < 352) throw error(errc::malformed_file, "file too small for NIfTI-1 header");

    auto rd_i32 = [&](std::size_t off) {
        std::int32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        return v;
    };
    auto rd_i16 = [&](std::size_t off) {
        std::int16_t v;
        std::memcpy(&v, buf.data() + off, 2);
        return v;
    };
    auto rd_f32 = [&](std::size_t off) {
        float v;
        std::memcpy(&v, buf.data() + off, 4);
        return v;
    };

    if (std::memcmp(buf.data() + 344, "n+1", 3) != 0) {
        throw error(errc::malformed_file, "not a single-file NIfTI-1 image (magic != n+1)");
    }

    std::int16_t ndim = rd_i16(40);
    bool swapped = !(ndim >= 1 && ndim <= 7);
    if (swapped) {
        throw error(errc::malformed_file,
                    "big-endian NIfTI not supported (dim[0] out of range)");
    }
    if (rd_i32(0) != 348) throw error(errc::malformed_file, "sizeof_hdr != 348");

    std::int16_t dim[8];
    for (int a = 0; a < 8; ++a) dim[a] = rd_i16(40 + 2 * a);
    if (ndim < 3) throw error(errc::invalid_geometry, "NIfTI image must be 3D or 4D");
    if (ndim > 4) {
        for (int a = 5; a <= ndim; ++a) {
            if (dim[a] > 1) throw error(errc::invalid_geometry, "NIfTI dims above 4 unsupported");
        }
    }

    NiftiImage img;
    img.grid = Grid3{dim[1], dim[2], dim[3]};
    img.nt = (ndim >= 4 && dim[4] > 0) ? dim[4] : 1;
    if (img.grid.nx <= 0 || img.grid.ny <= 0 || img.grid.nz <= 0) {
        throw error(errc::invalid_geometry, "nonpositive NIfTI dims");
    }
    for (int a = 0; a < 3; ++a) {
        float p = rd_f32(76 + 4 * (a + 1));
        if (!(p > 0.0f) || !std::isfinite(p)) {
            throw error(errc::invalid_geometry, "nonpositive NIfTI pixdim");
        }
        img.spacing_mm[a] = p;
    }

    std::int16_t datatype = rd_i16(70);
    float vox_offset = rd_f32(108);
    float scl_slope = rd_f32(112);
    float scl_inter = rd_f32(116);
    if (scl_slope == 0.0f || !std::isfinite(scl_slope)) scl_slope = 1.0f;
    if (!std::isfinite(scl_inter)) scl_inter = 0.0f;

    std::size_t n = img.grid.voxels() * static_cast<std::size_t>(img.nt);
    std::size_t off = static_cast<std::size_t>(vox_offset);
    if (off < 352) off = 352;

    auto need = [&](std::size_t bytes_per) {
        if (buf.size() < off + n * bytes_per) {
            throw error(errc::malformed_file, "truncated NIfTI payload");
        }
    };

    img.data.resize(n);
    const unsigned char* p = buf.data() + off;
    switch (datatype) {
        case 2: { // uint8
            need(1);
            for (std::size_t i = 0; i < n; ++i) img.data[i] = p[i];
            break;
        }
        case 256: { // int8
            need(1);
            for (std::size_t i = 0; i < n; ++i)
                img.data[i] = static_cast<float>(static_cast<std::int8_t>(p[i]));
            break;
        }
        case 4: { // int16
            need(2);
            for (std::size_t i = 0; i < n; ++i) {
                std::int16_t v;
                std::memcpy(&v, p + 2 * i, 2);
                img.data[i] = v;
            }
            break;
        }
        case 512: { // uint16
            need(2);
            for (std::size_t i = 0; i < n; ++i) {
                std::uint16_t v;
                std::memcpy(&v, p + 2 * i, 2);
                img.data[i] = v;
            }
            break;
        }
        case 8: { // int32
            need(4);
            for (std::size_t i = 0; i < n; ++i) {
                std::int32_t v;
                std::memcpy(&v, p + 4 * i, 4);
                img.data[i] = static_cast<float>(v);
            }
            break;
        }
        case 16: { // float32
            need(4);
            std::memcpy(img.data.data(), p, n * 4);
            break;
        }
        case 64: { // float64
            need(8);
            for (std::size_t i = 0; i < n; ++i) {
                double v;
                std::memcpy(&v, p + 8 * i, 8);
                img.data[i] = static_cast<float>(v);
            }
            break;
        }
        default:
            throw error(errc::malformed_file,
                        "unsupported NIfTI datatype " + std::to_string(datatype));
    }
    if (scl_slope != 1.0f || scl_inter != 0.0f) {
        for (auto& v : img.data) v = v * scl_slope + scl_inter;
    }
    return img;
}

// ---------------------------------------------------------------------------
// Typed loaders

namespace {

using nlohmann::json;

json read_json_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw error(errc::malformed_file, "cannot open " + path.string());
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw error(errc::malformed_file, path.string() + ": " + e.what());
    }
    return j;
}

struct Sidecar {
    std::vector<double> te_ms;
    double tr_ms = 0.0;
    bool has_spacing = false;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::vector<std::string> echo_files;
    std::string volume_file;
};

Sidecar parse_sidecar(const json& j, const std::filesystem::path& path) {
    Sidecar sc;
    if (!j.contains("te_ms") || !j["te_ms"].is_array() || j["te_ms"].empty()) {
        throw error(errc::missing_metadata, "no te_ms list in " + path.string());
    }
    for (const auto& v : j["te_ms"]) sc.te_ms.push_back(v.get<double>());
    if (j.contains("tr_ms")) sc.tr_ms = j["tr_ms"].get<double>();
    if (j.contains("spacing_mm")) {
        auto s = j["spacing_mm"];
        if (!s.is_array() || s.size() != 3) {
            throw error(errc::invalid_geometry, "spacing_mm must have 3 entries");
        }
        for (int a = 0; a < 3; ++a) sc.spacing_mm[a] = s[a].get<double>();
        sc.has_spacing = true;
    }
    if (j.contains("echo_files")) {
        for (const auto& f : j["echo_files"]) sc.echo_files.push_back(f.get<std::string>());
    }
    if (j.contains("volume")) sc.volume_file = j["volume"].get<std::string>();
    return sc;
}

std::filesystem::path sibling_sidecar(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    if (lower_ext(p) == ".gz") p.replace_extension(); // strip .gz, leaving .nii
    p.replace_extension(".json");
    return p;
}

MultiEchoVolume volume_from_nifti(const std::filesystem::path& path) {
    std::filesystem::path dir = path.parent_path();
    Sidecar sc;
    if (lower_ext(path) == ".json") {
        sc = parse_sidecar(read_json_file(path), path);
    } else {
        std::filesystem::path sp = sibling_sidecar(path);
        if (!std::filesystem::exists(sp)) {
            throw error(errc::missing_metadata,
                        "no TE sidecar found for " + path.string() + " (expected " +
                            sp.string() + ")");
        }
        sc = parse_sidecar(read_json_file(sp), sp);
        sc.volume_file = path.string();
    }

    auto resolve = [&](const std::string& f) {
        std::filesystem::path p(f);
        return p.is_absolute() ? p : dir / p;
    };

    if (!sc.echo_files.empty()) {
        if (sc.echo_files.size() != sc.te_ms.size()) {
            throw error(errc::missing_metadata, "echo_files count does not match te_ms");
        }
        std::vector<float> data;
        Grid3 grid;
        std::array<double, 3> spacing{};
        for (std::size_t e = 0; e < sc.echo_files.size(); ++e) {
            NiftiImage img = read_nifti(resolve(sc.echo_files[e]));
            if (img.nt != 1) {
                throw error(errc::invalid_geometry, "echo_files entries must be 3D");
            }
            if (e == 0) {
                grid = img.grid;
                spacing = img.spacing_mm;
                data.reserve(grid.voxels() * sc.echo_files.size());
            } else {
                check_grid_compatibility(grid, img.grid);
            }
            data.insert(data.end(), img.data.begin(), img.data.end());
        }
        if (sc.has_spacing) spacing = sc.spacing_mm;
        return MultiEchoVolume(grid, sc.te_ms, sc.tr_ms, spacing, std::move(data));
    }

    if (sc.volume_file.empty()) {
        throw error(errc::missing_metadata,
                    "sidecar needs either echo_files or volume: " + path.string());
    }
    NiftiImage img = read_nifti(resolve(sc.volume_file));
    if (static_cast<std::size_t>(img.nt) != sc.te_ms.size()) {
        throw error(errc::missing_metadata,
                    "4th NIfTI dim (" + std::to_string(img.nt) + ") does not match te_ms (" +
                        std::to_string(sc.te_ms.size()) + ")");
    }
    auto spacing = sc.has_spacing ? sc.spacing_mm : img.spacing_mm;
    return MultiEchoVolume(img.grid, sc.te_ms, sc.tr_ms, spacing, std::move(img.data));
}

std::vector<std::uint8_t> binarize_exact(const std::vector<float>& vals,
                                         const std::string& where) {
    std::vector<std::uint8_t> out(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (vals[i] == 0.0f) {
            out[i] = 0;
        } else if (vals[i] == 1.0f) {
            out[i] = 1;
        } else {
            throw error(errc::non_binary_values,
                        where + " contains value " + std::to_string(vals[i]));
        }
    }
    return out;
}

} // namespace

MultiEchoVolume load_multi_echo_volume(const std::filesystem::path& path, FileFormat format) {
    if (format == FileFormat::autodetect) format = detect_format(path);
    if (format == FileFormat::raw_container) {
        RawContainer rc = read_raw_container(path);
        if (rc.kind != ContainerKind::volume) {
            throw error(errc::malformed_file, path.string() + " is not a volume container");
        }
        if (rc.te_ms.size() != rc.channels) {
            throw error(errc::missing_metadata, "TE count does not match echo channels");
        }
        return MultiEchoVolume(rc.grid, rc.te_ms, rc.tr_ms, rc.spacing_mm, std::move(rc.data));
    }
    return volume_from_nifti(path);
}

SegmentationMask load_mask(const std::filesystem::path& path, FileFormat format) {
    if (format == FileFormat::autodetect) format = detect_format(path);
    if (format == FileFormat::raw_container) {
        RawContainer rc = read_raw_container(path);
        if (rc.kind != ContainerKind::mask || rc.channels != 1) {
            throw error(errc::malformed_file, path.string() + " is not a mask container");
        }
        return SegmentationMask(rc.grid, binarize_exact(rc.data, path.string()));
    }
    NiftiImage img = read_nifti(path);
    if (img.nt != 1) throw error(errc::invalid_geometry, "mask must be 3D");
    return SegmentationMask(img.grid, binarize_exact(img.data, path.string()));
}

ProbabilityMap load_probability_map(const std::filesystem::path& path, FileFormat format) {
    if (format == FileFormat::autodetect) format = detect_format(path);
    if (format == FileFormat::raw_container) {
        RawContainer rc = read_raw_container(path);
        if (rc.kind != ContainerKind::pmap || rc.channels != 1) {
            throw error(errc::malformed_file,
                        path.string() + " is not a probability-map container");
        }
        return ProbabilityMap(rc.grid, std::move(rc.data));
    }
    NiftiImage img = read_nifti(path);
    if (img.nt != 1) throw error(errc::invalid_geometry, "probability map must be 3D");
    return ProbabilityMap(img.grid, std::move(img.data));
}

T2Map load_t2_map(const std::filesystem::path& path) {
    RawContainer rc = read_raw_container(path);
    if (rc.kind != ContainerKind::t2map || rc.channels != 3) {
        throw error(errc::malformed_file, path.string() + " is not a T2-map container");
    }
    T2Map m(rc.grid);
    std::size_t n = rc.grid.voxels();
    for (std::size_t i = 0; i < n; ++i) {
        float t2 = rc.data[i];
        if (!std::isnan(t2)) {
            m.set(i, t2, rc.data[n + i], rc.data[2 * n + i]);
        }
    }
    return m;
}

void write_volume(const std::filesystem::path& path, const MultiEchoVolume& v) {
    RawContainer rc;
    rc.kind = ContainerKind::volume;
    rc.grid = v.grid();
    rc.channels = static_cast<std::uint32_t>(v.echoes());
    rc.spacing_mm = v.spacing_mm();
    rc.tr_ms = v.tr_ms();
    rc.te_ms = v.te_ms();
    rc.data = v.data();
    write_raw_container(path, rc);
}

void write_mask(const std::filesystem::path& path, const SegmentationMask& m) {
    RawContainer rc;
    rc.kind = ContainerKind::mask;
    rc.grid = m.grid();
    rc.channels = 1;
    rc.data.resize(m.grid().voxels());
    for (std::size_t i = 0; i < rc.data.size(); ++i) rc.data[i] = m.at(i) ? 1.0f : 0.0f;
    write_raw_container(path, rc);
}

void write_probability_map(const std::filesystem::path& path, const ProbabilityMap& pm,
                           std::array<double, 3> spacing) {
    RawContainer rc;
    rc.kind = ContainerKind::pmap;
    rc.grid = pm.grid();
    rc.channels = 1;
    rc.spacing_mm = spacing;
    rc.data = pm.values();
    write_raw_container(path, rc);
}

void write_t2_map(const std::filesystem::path& path, const T2Map& m,
                  std::array<double, 3> spacing) {
    RawContainer rc;
    rc.kind = ContainerKind::t2map;
    rc.grid = m.grid();
    rc.channels = 3;
    rc.spacing_mm = spacing;
    rc.data.reserve(3 * m.grid().voxels());
    rc.data.insert(rc.data.end(), m.t2_values().begin(), m.t2_values().end());
    rc.data.insert(rc.data.end(), m.s0_values().begin(), m.s0_values().end());
    rc.data.insert(rc.data.end(), m.c_values().begin(), m.c_values().end());
    write_raw_container(path, rc);
}

} // namespace cartiq
