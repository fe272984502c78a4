#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "volreg/aggregation.hpp"
#include "volreg/config.hpp"
#include "volreg/data.hpp"
#include "volreg/models.hpp"
#include "volreg/training.hpp"

namespace py = pybind11;
using namespace volreg;

namespace {

Volume volume_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3) throw DataError("volume array must be 3-dimensional");
    Volume v;
    v.dims = {a.shape(0), a.shape(1), a.shape(2)};
    v.voxels.assign(a.data(), a.data() + a.size());
    return v;
}

py::array_t<float> volume_to_array(const Volume& v) {
    py::array_t<float> a({v.dims[0], v.dims[1], v.dims[2]});
    std::copy(v.voxels.begin(), v.voxels.end(), a.mutable_data());
    return a;
}

Tensor tensor_from_2d(const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
                      const char* what) {
    if (a.ndim() != 2) throw ConfigError(std::string(what) + " must be 2-dimensional");
    std::vector<float> values(a.data(), a.data() + a.size());
    return Tensor::from_values({a.shape(0), a.shape(1)}, std::move(values));
}

Tensor tensor_from_1d(const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
                      const char* what) {
    if (a.ndim() != 1) throw ConfigError(std::string(what) + " must be 1-dimensional");
    std::vector<float> values(a.data(), a.data() + a.size());
    return Tensor::from_values({a.shape(0)}, std::move(values));
}

py::array_t<float> array_from_tensor(const Tensor& t) {
    py::array_t<float> a(t.shape());
    std::copy(t.values().begin(), t.values().end(), a.mutable_data());
    return a;
}

AttentionParams attention_from_arrays(const py::array_t<float>& query,
                                      const py::array_t<float>& key_weight,
                                      const py::array_t<float>& key_bias,
                                      const py::array_t<float>& value_weight,
                                      const py::array_t<float>& value_bias) {
    AttentionParams p;
    p.query = tensor_from_2d(query, "query");
    p.key_weight = tensor_from_2d(key_weight, "key_weight");
    p.key_bias = tensor_from_1d(key_bias, "key_bias");
    p.value_weight = tensor_from_2d(value_weight, "value_weight");
    p.value_bias = tensor_from_1d(value_bias, "value_bias");
    return p;
}

KvMap kv_from_dict(const py::dict& config) {
    KvMap kv;
    for (auto item : config)
        kv[py::str(item.first).cast<std::string>()] = py::str(item.second).cast<std::string>();
    return kv;
}

// Thin handle so checkpoints round-trip through python.
struct PyModel {
    std::unique_ptr<Model> model;

    float predict_volume(const py::array_t<float>& array, bool normalize) {
        Volume v = volume_from_array(array);
        if (normalize) normalize_minmax(v);
        NoGradGuard guard;
        Tensor input = model->spec().family == ModelFamily::cnn3d
                           ? volume_to_tensor<float>(v)
                           : slices_to_tensor<float>(slice_volume(v, model->spec().axis));
        return model->predict_one(input).values()[0];
    }

    float predict_slices(const SliceSet& slices) {
        if (model->spec().family == ModelFamily::cnn3d)
            throw ConfigError("cnn3d consumes whole volumes; use predict()");
        NoGradGuard guard;
        return model->predict_one(slices_to_tensor<float>(slices)).values()[0];
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Slice-set networks for volumetric age regression";
    m.attr("__version__") = "0.1.0";

    py::register_exception<ConfigError>(m, "VolregConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "VolregDataError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "VolregNumericError", PyExc_ArithmeticError);

    py::class_<SliceSet>(m, "SliceSet")
        .def_property_readonly("axis",
                               [](const SliceSet& s) { return axis_to_string(s.axis); })
        .def_readonly("source_extent", &SliceSet::source_extent)
        .def_readonly("indices", &SliceSet::indices)
        .def_property_readonly("count", &SliceSet::count)
        .def("planes",
             [](const SliceSet& s) {
                 py::array_t<float> a({s.count(), s.height, s.width});
                 std::copy(s.planes.begin(), s.planes.end(), a.mutable_data());
                 return a;
             })
        .def("__repr__", [](const SliceSet& s) {
            return "SliceSet(axis=" + axis_to_string(s.axis) + ", count=" +
                   std::to_string(s.count()) + "/" + std::to_string(s.source_extent) + ")";
        });

    m.def("load_volume",
          [](const std::filesystem::path& path) { return volume_to_array(load_volume(path)); },
          py::arg("path"));
    m.def("save_volume",
          [](const std::filesystem::path& path, const py::array_t<float>& array) {
              save_volume(path, volume_from_array(array));
          },
          py::arg("path"), py::arg("volume"));

    m.def("slice_volume",
          [](const py::array_t<float>& array, const std::string& axis) {
              return slice_volume(volume_from_array(array), axis_from_string(axis));
          },
          py::arg("volume"), py::arg("axis") = "sagittal");
    m.def("stack_slices",
          [](const SliceSet& s) { return volume_to_array(stack_slices(s)); },
          py::arg("slices"));
    m.def("drop_all_but_kth", &drop_all_but_kth, py::arg("slices"), py::arg("k"));
    m.def("drop_random_fraction", &drop_random_fraction, py::arg("slices"),
          py::arg("keep_fraction"), py::arg("seed") = 0);
    m.def("impute_nearest", &impute_nearest, py::arg("slices"));

    m.def("aggregate_mean",
          [](const py::array_t<float>& enc) {
              return array_from_tensor(aggregate_mean(tensor_from_2d(enc, "encodings")));
          },
          py::arg("encodings"));
    m.def("aggregate_max",
          [](const py::array_t<float>& enc) {
              return array_from_tensor(aggregate_max(tensor_from_2d(enc, "encodings")));
          },
          py::arg("encodings"));
    m.def("aggregate_attention",
          [](const py::array_t<float>& enc, const py::array_t<float>& query,
             const py::array_t<float>& key_weight, const py::array_t<float>& key_bias,
             const py::array_t<float>& value_weight, const py::array_t<float>& value_bias) {
              return array_from_tensor(aggregate_attention(
                  tensor_from_2d(enc, "encodings"),
                  attention_from_arrays(query, key_weight, key_bias, value_weight, value_bias)));
          },
          py::arg("encodings"), py::arg("query"), py::arg("key_weight"), py::arg("key_bias"),
          py::arg("value_weight"), py::arg("value_bias"));
    m.def("attention_weights",
          [](const py::array_t<float>& enc, const py::array_t<float>& query,
             const py::array_t<float>& key_weight, const py::array_t<float>& key_bias,
             const py::array_t<float>& value_weight, const py::array_t<float>& value_bias) {
              return array_from_tensor(attention_weights(
                  tensor_from_2d(enc, "encodings"),
                  attention_from_arrays(query, key_weight, key_bias, value_weight, value_bias)));
          },
          py::arg("encodings"), py::arg("query"), py::arg("key_weight"), py::arg("key_bias"),
          py::arg("value_weight"), py::arg("value_bias"));

    m.def("synth_dataset",
          [](const std::filesystem::path& out_dir, int64_t n, std::array<int64_t, 3> dims,
             uint64_t seed, double noise_level,
             std::optional<std::array<int64_t, 3>> split_counts) {
              SynthConfig cfg;
              cfg.n = n;
              cfg.dims = dims;
              cfg.seed = seed;
              cfg.noise_level = noise_level;
              cfg.split_counts = split_counts;
              return synth_dataset(cfg, out_dir).string();
          },
          py::arg("out_dir"), py::arg("n"), py::arg("dims") = std::array<int64_t, 3>{32, 40, 32},
          py::arg("seed") = 0, py::arg("noise_level") = 0.0,
          py::arg("split_counts") = std::nullopt);

    py::class_<PyModel>(m, "Model")
        .def_static("load",
                    [](const std::filesystem::path& path) {
                        return PyModel{load_checkpoint(path)};
                    },
                    py::arg("path"))
        .def("save",
             [](PyModel& self, const std::filesystem::path& path) {
                 save_checkpoint(path, *self.model);
             },
             py::arg("path"))
        .def("predict", &PyModel::predict_volume, py::arg("volume"),
             py::arg("normalize") = true)
        .def("predict_slices", &PyModel::predict_slices, py::arg("slices"))
        .def_property_readonly("param_count",
                               [](PyModel& self) { return self.model->param_count(); })
        .def_property_readonly("family", [](PyModel& self) {
            return family_to_string(self.model->spec().family);
        });

    m.def("param_count",
          [](const py::dict& config) {
              RunConfig rc = resolve_run_config(kv_from_dict(config));
              return make_model<float>(rc.model, 0)->param_count();
          },
          py::arg("config"));

    m.def("train",
          [](const std::filesystem::path& manifest, const py::dict& config,
             std::optional<std::filesystem::path> out_dir) {
              RunConfig rc = resolve_run_config(kv_from_dict(config));
              Dataset dataset = load_dataset(manifest);
              if (!dataset.train.empty())
                  rc.model.input_dims = dataset.train.front().dims;
              auto model = make_model<float>(rc.model, rc.train.seed);
              std::filesystem::path ckpt;
              const std::filesystem::path* ckpt_ptr = nullptr;
              if (out_dir) {
                  std::filesystem::create_directories(*out_dir);
                  ckpt = *out_dir / "checkpoint.vrck";
                  ckpt_ptr = &ckpt;
              }
              RunReport report = train_model(*model, dataset, rc.train, ckpt_ptr);
              if (out_dir) {
                  report.write_json(*out_dir / "report.json");
                  report.write_curve_csv(*out_dir / "curve.csv");
              }
              return py::module_::import("json").attr("loads")(report.to_json().dump());
          },
          py::arg("manifest"), py::arg("config"), py::arg("out_dir") = std::nullopt,
          "Run the full training protocol; returns the run report as a dict.");
}
