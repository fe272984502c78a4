#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "volreg/tensor.hpp"

namespace volreg {

// Slicing axes map to volume dims 1/2/3.
enum class Axis { sagittal = 0, coronal = 1, axial = 2 };

Axis axis_from_string(const std::string& name);
std::string axis_to_string(Axis axis);

enum class Split { train, val, test };

Split split_from_string(const std::string& name);
std::string split_to_string(Split split);

// One 3D scan: voxel grid (row-major, dim3 fastest), subject id, scalar
// label in years.
struct Volume {
    std::array<int64_t, 3> dims{0, 0, 0};
    std::vector<float> voxels;
    std::string subject_id;
    float age = 0.0f;
    Split split = Split::train;

    int64_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
};

// Unordered collection of 2D cross-sections of a volume along one axis.
// Original slice positions are retained for imputation; the model layers
// never consume them.
struct SliceSet {
    Axis axis = Axis::sagittal;
    int64_t source_extent = 0;       // slice count before any dropping
    int64_t height = 0, width = 0;   // plane shape
    std::vector<int64_t> indices;    // strictly increasing, in [0, source_extent)
    std::vector<float> planes;       // [count, height, width] row-major

    int64_t count() const { return static_cast<int64_t>(indices.size()); }
    const float* plane(int64_t i) const { return planes.data() + i * height * width; }
};

struct ManifestRow {
    std::string subject_id;
    std::string path;  // relative to the manifest's directory
    float age = 0.0f;
    Split split = Split::train;
};

// ---- RVOL container ---------------------------------------------------------
// magic "RVOL" | version u16 LE | 3 x u32 LE dims | D1*D2*D3 f32 LE payload.
Volume load_volume(const std::filesystem::path& path);
void save_volume(const std::filesystem::path& path, const Volume& volume);

// ---- slicing ----------------------------------------------------------------
SliceSet slice_volume(const Volume& volume, Axis axis);
// inverse of slice_volume; requires a full-extent slice set
Volume stack_slices(const SliceSet& slices);

// keeps slices with original index == 0 (mod k); k=1 is the identity
SliceSet drop_all_but_kth(const SliceSet& slices, int64_t k);
// keeps round(keep_fraction * count) slices chosen uniformly without
// replacement; deterministic per seed; relative order is preserved
SliceSet drop_random_fraction(const SliceSet& slices, double keep_fraction, uint64_t seed);
// restores full extent by copying, for every missing position, the present
// plane with minimal index distance; ties go to the lower index
SliceSet impute_nearest(const SliceSet& slices);

// per-volume min-max scaling to [0,1]; constant volumes map to all zeros
void normalize_minmax(Volume& volume);

// ---- manifest ----------------------------------------------------------------
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

struct Dataset {
    std::vector<Volume> train, val, test;

    const std::vector<Volume>& split(Split s) const {
        switch (s) {
            case Split::train: return train;
            case Split::val: return val;
            default: return test;
        }
    }
};

// Loads every volume referenced by the manifest; normalize applies the
// min-max input scaling used by the models.
Dataset load_dataset(const std::filesystem::path& manifest_path, bool normalize = true);

// ---- synthetic volumes --------------------------------------------------------
// Volumes carry an ellipsoidal shell whose radius and interior intensity are
// affine in the age label, plus seeded voxel noise. Labels are uniform in
// [45, 80].
struct SynthConfig {
    int64_t n = 0;
    std::array<int64_t, 3> dims{32, 40, 32};
    uint64_t seed = 0;
    double noise_level = 0.0;
    // explicit split sizes; defaults to the 70/9/21 ratio when absent
    std::optional<std::array<int64_t, 3>> split_counts;
};

// train = n - val - test with val ~ 9% and test ~ 21%, each at least 1
std::array<int64_t, 3> default_split_counts(int64_t n);

// Generates one synthetic volume (without noise applied when noise_level=0);
// exposed so datasets and tests can build individual scans.
Volume make_synth_volume(const std::array<int64_t, 3>& dims, float age, uint64_t noise_seed,
                         double noise_level);

// Writes RVOL files plus manifest.csv under out_dir; returns the manifest
// path. Bitwise deterministic for a fixed config.
std::filesystem::path synth_dataset(const SynthConfig& config,
                                    const std::filesystem::path& out_dir);

// ---- tensor bridging -----------------------------------------------------------
// [count, 1, height, width]; rows ordered as stored (ascending index)
template <typename T>
TensorT<T> slices_to_tensor(const SliceSet& slices);
// [1, 1, D1, D2, D3]
template <typename T>
TensorT<T> volume_to_tensor(const Volume& volume);

}  // namespace volreg
