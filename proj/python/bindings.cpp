#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <map>

#include "brainage/dataset.hpp"
#include "brainage/imaging.hpp"
#include "brainage/pipeline.hpp"
#include "brainage/saliency.hpp"
#include "brainage/stats.hpp"

namespace py = pybind11;
using namespace brainage;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Volume& v) {
  const Dims& d = v.dims();
  py::array_t<float> out({d.depth, d.height, d.width});
  std::memcpy(out.mutable_data(), v.voxels().data(), v.voxels().size() * sizeof(float));
  return out;
}

Volume from_numpy(const FloatArray& a, std::optional<std::array<float, 16>> affine, const std::string& modality) {
  if (a.ndim() != 3) throw Error(ErrorCode::ShapeMismatch, "expected a 3-D array (z, y, x)");
  const Dims d{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
               static_cast<std::size_t>(a.shape(2))};
  std::vector<float> vox(a.data(), a.data() + a.size());
  return Volume(d, std::move(vox), affine.value_or(identity_affine()), parse_modality(modality));
}

py::dict record_dict(const ScanRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["age"] = r.age;
  d["sex"] = r.sex == Sex::Male ? "M" : "F";
  d["project"] = r.project;
  return d;
}

stats::OlsFit fit_columns(const std::map<std::string, std::vector<double>>& cols, const std::vector<double>& y) {
  std::vector<std::pair<std::string, std::span<const double>>> view;
  for (const auto& [name, c] : cols) view.emplace_back(name, c);
  return stats::ols_fit(stats::Design::with_intercept(view), y);
}

py::dict fit_dict(const stats::OlsFit& fit) {
  py::dict coefs;
  for (std::size_t j = 0; j < fit.names.size(); ++j) coefs[py::str(fit.names[j])] = fit.coefficients[j];
  py::dict d;
  d["coefficients"] = coefs;
  d["rss"] = fit.rss;
  d["n"] = fit.n;
  d["p"] = fit.p;
  d["fitted"] = fit.fitted;
  return d;
}

pipeline::RunConfig make_config(const std::optional<std::string>& config_json, const std::optional<std::string>& out,
                                std::optional<std::uint64_t> seed) {
  pipeline::RunConfig cfg = config_json ? pipeline::config_from_json(*config_json) : pipeline::RunConfig{};
  if (out) cfg.paths.out = *out;
  if (seed) cfg.seed = *seed;
  pipeline::validate(cfg);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_brainage, m) {
  m.doc() = "Bindings for the brainage C++ core";

  static py::exception<Error> error_type(m, "BrainageError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const pipeline::StageError& e) {
      py::object err = py::reinterpret_borrow<py::object>(error_type.ptr())(py::str(std::string(to_string(e.code()))), py::str(e.message()));
      err.attr("code") = std::string(to_string(e.code()));
      err.attr("stage") = std::string(pipeline::to_string(e.stage()));
      PyErr_SetObject(error_type.ptr(), err.ptr());
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(error_type.ptr())(py::str(std::string(to_string(e.code()))), py::str(e.message()));
      err.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error_type.ptr(), err.ptr());
    }
  });

  // imaging / dataset
  m.def(
      "load_nifti",
      [](const std::filesystem::path& path) {
        const Volume v = load_nifti(path);
        return py::make_tuple(to_numpy(v), v.affine(), std::string(to_string(v.modality())));
      },
      py::arg("path"), "Returns (voxels[z, y, x], affine (16 floats, row-major), modality).");
  m.def(
      "save_nifti",
      [](const std::filesystem::path& path, const FloatArray& voxels, std::optional<std::array<float, 16>> affine,
         const std::string& modality) { save_nifti(from_numpy(voxels, affine, modality), path); },
      py::arg("path"), py::arg("voxels"), py::arg("affine") = py::none(), py::arg("modality") = "t1w");
  m.def(
      "normalize_top_percent",
      [](const FloatArray& voxels, double fraction) {
        const auto n = normalize_top_percent(from_numpy(voxels, std::nullopt, "t1w"), fraction);
        return py::make_tuple(to_numpy(n.volume), n.divisor);
      },
      py::arg("voxels"), py::arg("fraction") = 0.01);
  m.def(
      "make_phantom",
      [](std::size_t index, std::uint64_t seed, std::size_t count, std::size_t grid) {
        PhantomSpec spec;
        spec.seed = seed;
        spec.count = count;
        spec.grid = grid;
        validate(spec);
        const Phantom p = make_phantom(spec, index);
        py::dict d = record_dict(p.record);
        d["t1w"] = to_numpy(p.t1w);
        d["aicbv"] = to_numpy(p.aicbv);
        return d;
      },
      py::arg("index"), py::arg("seed") = 0, py::arg("count") = 60, py::arg("grid") = 32);

  // stats
  m.def("regularized_incomplete_beta", &stats::regularized_incomplete_beta, py::arg("x"), py::arg("a"), py::arg("b"));
  m.def("f_upper_tail", &stats::f_upper_tail, py::arg("f"), py::arg("d1"), py::arg("d2"));
  m.def("t_two_sided", &stats::t_two_sided, py::arg("t"), py::arg("df"));
  m.def(
      "ols_fit", [](const std::map<std::string, std::vector<double>>& cols, const std::vector<double>& y) {
        return fit_dict(fit_columns(cols, y));
      },
      py::arg("columns"), py::arg("y"), "Least squares with an intercept; columns maps name -> values.");
  m.def(
      "nested_f_test",
      [](const std::map<std::string, std::vector<double>>& reduced, const std::map<std::string, std::vector<double>>& full,
         const std::vector<double>& y) {
        const auto r = stats::anova_nested(fit_columns(reduced, y), fit_columns(full, y));
        py::dict d;
        d["f"] = r.f;
        d["df_num"] = r.df_num;
        d["df_den"] = r.df_den;
        d["p_value"] = r.p_value;
        return d;
      },
      py::arg("reduced"), py::arg("full"), py::arg("y"));

  // saliency
  m.def(
      "top_fraction_mask",
      [](const FloatArray& values, double fraction) {
        if (values.ndim() != 3) throw Error(ErrorCode::ShapeMismatch, "expected a 3-D array (z, y, x)");
        GradMap map;
        map.dims = Dims{static_cast<std::size_t>(values.shape(0)), static_cast<std::size_t>(values.shape(1)),
                        static_cast<std::size_t>(values.shape(2))};
        map.values.assign(values.data(), values.data() + values.size());
        const auto mask = top_fraction_mask(map, fraction);
        py::array_t<bool> out({values.shape(0), values.shape(1), values.shape(2)});
        auto* o = out.mutable_data();
        for (std::size_t i = 0; i < mask.keep.size(); ++i) o[i] = mask.keep[i] != 0;
        return out;
      },
      py::arg("values"), py::arg("fraction") = 0.2);

  // pipeline
  m.def(
      "default_config", [] { return pipeline::config_to_json(pipeline::RunConfig{}); },
      "Canonical JSON for the default run configuration.");
  m.def(
      "run_stage",
      [](const std::string& stage, std::optional<std::string> config_json, std::optional<std::string> out,
         std::optional<std::uint64_t> seed, bool verbose) {
        pipeline::Context ctx{make_config(config_json, out, seed), {}};
        if (verbose) ctx.log = [](std::string_view line) {
          py::gil_scoped_acquire gil;
          py::print(std::string(line));
        };
        py::gil_scoped_release release;
        if (stage == "synth") pipeline::cmd_synth(ctx);
        else if (stage == "split") pipeline::cmd_split(ctx);
        else if (stage == "train_t1w") pipeline::cmd_train(ctx, Modality::T1w);
        else if (stage == "train_aicbv") pipeline::cmd_train(ctx, Modality::AICBV);
        else if (stage == "predict") pipeline::cmd_predict(ctx);
        else if (stage == "ensemble") pipeline::cmd_ensemble(ctx);
        else if (stage == "report") pipeline::cmd_report(ctx);
        else if (stage == "gradcam") pipeline::cmd_gradcam(ctx);
        else if (stage == "all") pipeline::cmd_all(ctx);
        else throw Error(ErrorCode::ConfigInvalid, "unknown stage '" + stage + "'");
      },
      py::arg("stage"), py::arg("config_json") = py::none(), py::arg("out") = py::none(), py::arg("seed") = py::none(),
      py::arg("verbose") = false);
}
