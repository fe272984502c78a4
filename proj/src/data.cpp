#include "volreg/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "volreg/rng.hpp"

namespace volreg {

static_assert(std::endian::native == std::endian::little,
              "RVOL I/O assumes a little-endian host");

Axis axis_from_string(const std::string& name) {
    if (name == "sagittal") return Axis::sagittal;
    if (name == "coronal") return Axis::coronal;
    if (name == "axial") return Axis::axial;
    throw ConfigError("unknown axis '" + name + "' (expected sagittal|coronal|axial)");
}

std::string axis_to_string(Axis axis) {
    switch (axis) {
        case Axis::sagittal: return "sagittal";
        case Axis::coronal: return "coronal";
        default: return "axial";
    }
}

Split split_from_string(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

std::string split_to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

// ---- RVOL container ---------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'V', 'O', 'L'};
constexpr uint16_t kVersion = 1;

void check_dims(const std::array<int64_t, 3>& dims, const char* what) {
    for (int64_t d : dims)
        if (d < 4) throw DataError(std::string(what) + ": volume dims must each be >= 4");
}

}  // namespace

Volume load_volume(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open volume file: " + path.string());

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("not an RVOL file: " + path.string());
    uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kVersion)
        throw DataError("unsupported RVOL version in " + path.string());
    uint32_t dims32[3];
    in.read(reinterpret_cast<char*>(dims32), sizeof(dims32));
    if (!in) throw DataError("truncated RVOL header: " + path.string());

    Volume volume;
    volume.dims = {static_cast<int64_t>(dims32[0]), static_cast<int64_t>(dims32[1]),
                   static_cast<int64_t>(dims32[2])};
    check_dims(volume.dims, "load_volume");
    const int64_t n = volume.voxel_count();
    volume.voxels.resize(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(volume.voxels.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
        throw DataError("truncated RVOL payload: " + path.string());
    for (float v : volume.voxels)
        if (!std::isfinite(v)) throw DataError("non-finite voxel in " + path.string());
    return volume;
}

void save_volume(const std::filesystem::path& path, const Volume& volume) {
    check_dims(volume.dims, "save_volume");
    if (volume.voxel_count() != static_cast<int64_t>(volume.voxels.size()))
        throw DataError("save_volume: voxel buffer does not match dims");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write volume file: " + path.string());
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    uint32_t dims32[3] = {static_cast<uint32_t>(volume.dims[0]),
                          static_cast<uint32_t>(volume.dims[1]),
                          static_cast<uint32_t>(volume.dims[2])};
    out.write(reinterpret_cast<const char*>(dims32), sizeof(dims32));
    out.write(reinterpret_cast<const char*>(volume.voxels.data()),
              static_cast<std::streamsize>(volume.voxels.size() * sizeof(float)));
    if (!out) throw DataError("failed writing volume file: " + path.string());
}

// ---- slicing ----------------------------------------------------------------

SliceSet slice_volume(const Volume& volume, Axis axis) {
    const int64_t d1 = volume.dims[0], d2 = volume.dims[1], d3 = volume.dims[2];
    SliceSet set;
    set.axis = axis;
    switch (axis) {
        case Axis::sagittal:
            set.source_extent = d1;
            set.height = d2;
            set.width = d3;
            break;
        case Axis::coronal:
            set.source_extent = d2;
            set.height = d1;
            set.width = d3;
            break;
        case Axis::axial:
            set.source_extent = d3;
            set.height = d1;
            set.width = d2;
            break;
    }
    set.indices.resize(static_cast<size_t>(set.source_extent));
    for (int64_t i = 0; i < set.source_extent; ++i) set.indices[static_cast<size_t>(i)] = i;
    set.planes.resize(static_cast<size_t>(set.source_extent * set.height * set.width));

    const float* v = volume.voxels.data();
    float* out = set.planes.data();
    switch (axis) {
        case Axis::sagittal:
            // slice i is the contiguous block v[i, :, :]
            std::memcpy(out, v, static_cast<size_t>(d1 * d2 * d3) * sizeof(float));
            break;
        case Axis::coronal:
            for (int64_t j = 0; j < d2; ++j)
                for (int64_t i = 0; i < d1; ++i)
                    std::memcpy(out + (j * d1 + i) * d3, v + (i * d2 + j) * d3,
                                static_cast<size_t>(d3) * sizeof(float));
            break;
        case Axis::axial:
            for (int64_t k = 0; k < d3; ++k)
                for (int64_t i = 0; i < d1; ++i)
                    for (int64_t j = 0; j < d2; ++j)
                        out[(k * d1 + i) * d2 + j] = v[(i * d2 + j) * d3 + k];
            break;
    }
    return set;
}

Volume stack_slices(const SliceSet& slices) {
    if (slices.count() != slices.source_extent)
        throw DataError("stack_slices: slice set is not full extent");
    for (int64_t i = 0; i < slices.count(); ++i)
        if (slices.indices[static_cast<size_t>(i)] != i)
            throw DataError("stack_slices: slice indices are not 0..extent-1");

    Volume volume;
    const int64_t e = slices.source_extent, h = slices.height, w = slices.width;
    switch (slices.axis) {
        case Axis::sagittal: volume.dims = {e, h, w}; break;
        case Axis::coronal: volume.dims = {h, e, w}; break;
        case Axis::axial: volume.dims = {h, w, e}; break;
    }
    volume.voxels.resize(static_cast<size_t>(volume.voxel_count()));
    const int64_t d1 = volume.dims[0], d2 = volume.dims[1], d3 = volume.dims[2];
    float* v = volume.voxels.data();
    const float* in = slices.planes.data();
    switch (slices.axis) {
        case Axis::sagittal:
            std::memcpy(v, in, static_cast<size_t>(d1 * d2 * d3) * sizeof(float));
            break;
        case Axis::coronal:
            for (int64_t j = 0; j < d2; ++j)
                for (int64_t i = 0; i < d1; ++i)
                    std::memcpy(v + (i * d2 + j) * d3, in + (j * d1 + i) * d3,
                                static_cast<size_t>(d3) * sizeof(float));
            break;
        case Axis::axial:
            for (int64_t k = 0; k < d3; ++k)
                for (int64_t i = 0; i < d1; ++i)
                    for (int64_t j = 0; j < d2; ++j)
                        v[(i * d2 + j) * d3 + k] = in[(k * d1 + i) * d2 + j];
            break;
    }
    return volume;
}

namespace {

SliceSet copy_subset(const SliceSet& src, const std::vector<int64_t>& positions) {
    SliceSet out;
    out.axis = src.axis;
    out.source_extent = src.source_extent;
    out.height = src.height;
    out.width = src.width;
    const int64_t plane = src.height * src.width;
    out.indices.reserve(positions.size());
    out.planes.resize(positions.size() * static_cast<size_t>(plane));
    for (size_t i = 0; i < positions.size(); ++i) {
        out.indices.push_back(src.indices[static_cast<size_t>(positions[i])]);
        std::memcpy(out.planes.data() + static_cast<int64_t>(i) * plane,
                    src.plane(positions[i]), static_cast<size_t>(plane) * sizeof(float));
    }
    return out;
}

}  // namespace

SliceSet drop_all_but_kth(const SliceSet& slices, int64_t k) {
    if (k < 1) throw ConfigError("drop_all_but_kth: k must be >= 1");
    std::vector<int64_t> keep;
    for (int64_t i = 0; i < slices.count(); ++i)
        if (slices.indices[static_cast<size_t>(i)] % k == 0) keep.push_back(i);
    return copy_subset(slices, keep);
}

SliceSet drop_random_fraction(const SliceSet& slices, double keep_fraction, uint64_t seed) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
        throw ConfigError("drop_random_fraction: keep_fraction must be in (0, 1]");
    const int64_t n = slices.count();
    const int64_t m = std::lround(keep_fraction * static_cast<double>(n));
    if (m < 1) throw ConfigError("drop_random_fraction: fraction keeps no slices");

    std::vector<int64_t> positions(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    // partial Fisher-Yates: first m entries are a uniform sample
    for (int64_t i = 0; i < m; ++i) {
        const int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - i)));
        std::swap(positions[static_cast<size_t>(i)], positions[static_cast<size_t>(j)]);
    }
    positions.resize(static_cast<size_t>(m));
    std::sort(positions.begin(), positions.end());
    return copy_subset(slices, positions);
}

SliceSet impute_nearest(const SliceSet& slices) {
    if (slices.count() == 0) throw DataError("impute_nearest: empty slice set");
    SliceSet out;
    out.axis = slices.axis;
    out.source_extent = slices.source_extent;
    out.height = slices.height;
    out.width = slices.width;
    const int64_t plane = slices.height * slices.width;
    out.indices.resize(static_cast<size_t>(slices.source_extent));
    out.planes.resize(static_cast<size_t>(slices.source_extent * plane));

    for (int64_t target = 0; target < slices.source_extent; ++target) {
        out.indices[static_cast<size_t>(target)] = target;
        // nearest present index; tie toward the lower one
        const auto& idx = slices.indices;
        auto it = std::lower_bound(idx.begin(), idx.end(), target);
        int64_t best;
        if (it == idx.end()) {
            best = static_cast<int64_t>(idx.size()) - 1;
        } else if (it == idx.begin()) {
            best = 0;
        } else {
            const int64_t hi = static_cast<int64_t>(it - idx.begin());
            const int64_t lo = hi - 1;
            best = (idx[static_cast<size_t>(hi)] - target < target - idx[static_cast<size_t>(lo)])
                       ? hi
                       : lo;
        }
        std::memcpy(out.planes.data() + target * plane, slices.plane(best),
                    static_cast<size_t>(plane) * sizeof(float));
    }
    return out;
}

void normalize_minmax(Volume& volume) {
    if (volume.voxels.empty()) return;
    auto [lo_it, hi_it] = std::minmax_element(volume.voxels.begin(), volume.voxels.end());
    const float lo = *lo_it, hi = *hi_it;
    if (hi > lo) {
        const float inv = 1.0f / (hi - lo);
        for (auto& v : volume.voxels) v = (v - lo) * inv;
    } else {
        std::fill(volume.voxels.begin(), volume.voxels.end(), 0.0f);
    }
}

// ---- manifest ----------------------------------------------------------------

namespace {
constexpr const char* kManifestHeader = "subject_id,path,age,split";
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty manifest: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader)
        throw DataError("manifest header must be '" + std::string(kManifestHeader) + "'");

    std::vector<ManifestRow> rows;
    std::vector<std::string> seen_ids;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<std::string, 4> fields;
        size_t start = 0;
        for (int f = 0; f < 4; ++f) {
            const size_t comma = line.find(',', start);
            if (f < 3) {
                if (comma == std::string::npos)
                    throw DataError("manifest line " + std::to_string(line_no) +
                                    ": expected 4 comma-separated fields");
                fields[static_cast<size_t>(f)] = line.substr(start, comma - start);
                start = comma + 1;
            } else {
                fields[3] = line.substr(start);
            }
        }
        ManifestRow row;
        row.subject_id = fields[0];
        row.path = fields[1];
        try {
            row.age = std::stof(fields[2]);
        } catch (const std::exception&) {
            throw DataError("manifest line " + std::to_string(line_no) + ": bad age '" +
                            fields[2] + "'");
        }
        row.split = split_from_string(fields[3]);
        rows.push_back(std::move(row));
    }
    seen_ids.reserve(rows.size());
    for (const auto& r : rows) seen_ids.push_back(r.subject_id);
    std::sort(seen_ids.begin(), seen_ids.end());
    if (std::adjacent_find(seen_ids.begin(), seen_ids.end()) != seen_ids.end())
        throw DataError("manifest contains duplicate subject ids");
    return rows;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << kManifestHeader << "\n";
    char age_buf[32];
    for (const auto& row : rows) {
        std::snprintf(age_buf, sizeof(age_buf), "%.9g", static_cast<double>(row.age));
        out << row.subject_id << "," << row.path << "," << age_buf << ","
            << split_to_string(row.split) << "\n";
    }
    if (!out) throw DataError("failed writing manifest: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& manifest_path, bool normalize) {
    const auto rows = read_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    Dataset dataset;
    for (const auto& row : rows) {
        std::filesystem::path p(row.path);
        Volume volume = load_volume(p.is_absolute() ? p : base / p);
        volume.subject_id = row.subject_id;
        volume.age = row.age;
        volume.split = row.split;
        if (normalize) normalize_minmax(volume);
        switch (row.split) {
            case Split::train: dataset.train.push_back(std::move(volume)); break;
            case Split::val: dataset.val.push_back(std::move(volume)); break;
            case Split::test: dataset.test.push_back(std::move(volume)); break;
        }
    }
    return dataset;
}

// ---- synthetic volumes --------------------------------------------------------

namespace {

// shell/interior profile constants; the label is recoverable from either the
// shell radius or the interior plateau intensity
constexpr double kAgeLo = 45.0, kAgeHi = 80.0;
constexpr double kRadiusLo = 0.45, kRadiusSpan = 0.30;
constexpr double kInteriorLo = 0.25, kInteriorSpan = 0.50;
constexpr double kShellWidth = 0.08;

}  // namespace

std::array<int64_t, 3> default_split_counts(int64_t n) {
    if (n < 3) throw ConfigError("dataset needs at least 3 volumes (one per split)");
    const int64_t val = std::max<int64_t>(1, std::lround(0.09 * static_cast<double>(n)));
    const int64_t test = std::max<int64_t>(1, std::lround(0.21 * static_cast<double>(n)));
    const int64_t train = n - val - test;
    if (train < 1) throw ConfigError("dataset of " + std::to_string(n) +
                                     " volumes leaves no training split");
    return {train, val, test};
}

Volume make_synth_volume(const std::array<int64_t, 3>& dims, float age, uint64_t noise_seed,
                         double noise_level) {
    check_dims(dims, "make_synth_volume");
    Volume volume;
    volume.dims = dims;
    volume.age = age;
    volume.voxels.resize(static_cast<size_t>(volume.voxel_count()));

    const double t = (static_cast<double>(age) - kAgeLo) / (kAgeHi - kAgeLo);
    const double radius = kRadiusLo + kRadiusSpan * t;
    const double interior = kInteriorLo + kInteriorSpan * t;
    const double cx = (static_cast<double>(dims[0]) - 1.0) / 2.0;
    const double cy = (static_cast<double>(dims[1]) - 1.0) / 2.0;
    const double cz = (static_cast<double>(dims[2]) - 1.0) / 2.0;
    const double sx = static_cast<double>(dims[0]) / 2.0;
    const double sy = static_cast<double>(dims[1]) / 2.0;
    const double sz = static_cast<double>(dims[2]) / 2.0;

    Rng noise(noise_seed);
    size_t idx = 0;
    for (int64_t x = 0; x < dims[0]; ++x) {
        const double ux = (static_cast<double>(x) - cx) / sx;
        for (int64_t y = 0; y < dims[1]; ++y) {
            const double uy = (static_cast<double>(y) - cy) / sy;
            for (int64_t z = 0; z < dims[2]; ++z) {
                const double uz = (static_cast<double>(z) - cz) / sz;
                const double rho = std::sqrt(ux * ux + uy * uy + uz * uz);
                double v;
                if (rho < radius - kShellWidth) {
                    v = interior;
                } else if (rho <= radius) {
                    v = interior + (1.0 - interior) * (1.0 - (radius - rho) / kShellWidth);
                } else if (rho <= radius + kShellWidth) {
                    v = 1.0 - (rho - radius) / kShellWidth;
                } else {
                    v = 0.0;
                }
                if (noise_level > 0.0) v += noise_level * noise.normal();
                volume.voxels[idx++] = static_cast<float>(v);
            }
        }
    }
    return volume;
}

std::filesystem::path synth_dataset(const SynthConfig& config,
                                    const std::filesystem::path& out_dir) {
    check_dims(config.dims, "synth_dataset");
    std::array<int64_t, 3> counts{};
    if (config.split_counts) {
        counts = *config.split_counts;
        for (int64_t c : counts)
            if (c < 1) throw ConfigError("synth_dataset: each split needs at least 1 volume");
        const int64_t total = counts[0] + counts[1] + counts[2];
        if (config.n != 0 && config.n != total)
            throw ConfigError("synth_dataset: n does not match explicit split counts");
    } else {
        counts = default_split_counts(config.n);
    }
    const int64_t total = counts[0] + counts[1] + counts[2];

    std::filesystem::create_directories(out_dir / "vols");
    Rng ages(mix_seed(config.seed, 0x616765));

    std::vector<ManifestRow> rows;
    rows.reserve(static_cast<size_t>(total));
    char name[64];
    for (int64_t i = 0; i < total; ++i) {
        const float age = static_cast<float>(ages.uniform(kAgeLo, kAgeHi));
        std::snprintf(name, sizeof(name), "subj_%05lld", static_cast<long long>(i));
        Volume volume = make_synth_volume(config.dims, age,
                                          mix_seed(config.seed, static_cast<uint64_t>(i) + 1),
                                          config.noise_level);
        volume.subject_id = name;
        volume.split = i < counts[0]             ? Split::train
                       : i < counts[0] + counts[1] ? Split::val
                                                   : Split::test;
        const std::string rel = std::string("vols/") + name + ".rvol";
        save_volume(out_dir / rel, volume);
        rows.push_back({volume.subject_id, rel, age, volume.split});
    }
    const auto manifest_path = out_dir / "manifest.csv";
    write_manifest(manifest_path, rows);
    return manifest_path;
}

// ---- tensor bridging -----------------------------------------------------------

template <typename T>
TensorT<T> slices_to_tensor(const SliceSet& slices) {
    if (slices.count() == 0) throw DataError("empty slice set cannot be encoded");
    std::vector<T> values(slices.planes.begin(), slices.planes.end());
    return TensorT<T>::from_values({slices.count(), 1, slices.height, slices.width},
                                   std::move(values));
}

template <typename T>
TensorT<T> volume_to_tensor(const Volume& volume) {
    if (volume.voxels.empty()) throw DataError("empty volume cannot be encoded");
    std::vector<T> values(volume.voxels.begin(), volume.voxels.end());
    return TensorT<T>::from_values({1, 1, volume.dims[0], volume.dims[1], volume.dims[2]},
                                   std::move(values));
}

template TensorT<float> slices_to_tensor<float>(const SliceSet&);
template TensorT<double> slices_to_tensor<double>(const SliceSet&);
template TensorT<float> volume_to_tensor<float>(const Volume&);
template TensorT<double> volume_to_tensor<double>(const Volume&);

}  // namespace volreg
