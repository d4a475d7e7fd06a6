#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "factormap/cli.hpp"
#include "factormap/config.hpp"
#include "factormap/data.hpp"
#include "factormap/error.hpp"
#include "factormap/field.hpp"
#include "factormap/metrics.hpp"
#include "factormap/pipeline.hpp"

namespace py = pybind11;
namespace fm = factormap;

namespace {

using Points = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<fm::Vec3> to_points(const Points& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw fm::InvalidInput("expected an (N, 3) array of points");
  std::vector<fm::Vec3> out(static_cast<std::size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i] = {r(i, 0), r(i, 1), r(i, 2)};
  return out;
}

fm::FieldShape make_shape(int res, int density_channels, int appearance_channels, int hidden) {
  fm::FieldShape s{res, density_channels, appearance_channels, hidden};
  s.validate();
  return s;
}

py::dict report_dict(const fm::ReconReport& r) {
  py::dict d;
  d["accuracy_cm"] = r.accuracy_cm;
  d["completion_cm"] = r.completion_cm;
  d["completion_ratio_pct"] = r.completion_ratio_pct;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "factormap C++ core";

  auto base = py::register_exception<fm::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<fm::InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<fm::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<fm::DataError>(m, "DataError", base.ptr());
  py::register_exception<fm::DivergenceError>(m, "DivergenceError", base.ptr());

  m.def(
      "main",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = fm::cli_main(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the command line tool in-process; returns (exit_code, stdout, stderr).");

  m.def("default_config", [] { return fm::config_to_json(fm::RunConfig{}); },
        "Default run configuration as JSON text.");
  m.def("default_scene", [] { return fm::scene_spec_to_json(fm::SyntheticSceneSpec{}); },
        "Default synthetic scene spec as JSON text.");

  m.def(
      "param_count",
      [](int res, int dc, int ac, int hidden, bool with_decoder) {
        return fm::param_count(make_shape(res, dc, ac, hidden), with_decoder);
      },
      py::arg("res") = 128, py::arg("density_channels") = 16, py::arg("appearance_channels") = 24,
      py::arg("hidden") = 48, py::arg("with_decoder") = true);
  m.def(
      "flops_per_point",
      [](int res, int dc, int ac, int hidden) { return fm::flops_per_point(make_shape(res, dc, ac, hidden)); },
      py::arg("res") = 128, py::arg("density_channels") = 16, py::arg("appearance_channels") = 24,
      py::arg("hidden") = 48);

  m.def("accuracy_cm", [](const Points& pred, const Points& gt) {
    return fm::accuracy_cm(to_points(pred), to_points(gt));
  });
  m.def("completion_cm", [](const Points& pred, const Points& gt) {
    return fm::completion_cm(to_points(pred), to_points(gt));
  });
  m.def(
      "completion_ratio",
      [](const Points& pred, const Points& gt, double threshold) {
        return fm::completion_ratio(to_points(pred), to_points(gt), threshold);
      },
      py::arg("pred"), py::arg("gt"), py::arg("threshold") = 0.05);
  m.def(
      "evaluate",
      [](const Points& pred, const Points& gt, double threshold) {
        return report_dict(fm::evaluate_clouds(to_points(pred), to_points(gt), threshold));
      },
      py::arg("pred"), py::arg("gt"), py::arg("threshold") = 0.05);
  m.def("psnr_from_mse", &fm::psnr_from_mse);

  m.def(
      "read_ply",
      [](const std::filesystem::path& path) {
        const fm::ColoredPointCloud cloud = fm::read_ply(path);
        const auto n = static_cast<py::ssize_t>(cloud.size());
        py::array_t<double> xyz({n, py::ssize_t{3}});
        py::array_t<std::uint8_t> rgb({n, py::ssize_t{3}});
        auto p = xyz.mutable_unchecked<2>();
        auto c = rgb.mutable_unchecked<2>();
        for (py::ssize_t i = 0; i < n; ++i)
          for (int k = 0; k < 3; ++k) {
            p(i, k) = cloud[i].position[k];
            c(i, k) = cloud[i].color[k];
          }
        return py::make_tuple(xyz, rgb);
      },
      py::arg("path"), "Returns (positions (N,3) float64, colors (N,3) uint8).");

  // Read-only view of a saved map.
  py::class_<fm::MapState>(m, "Map")
      .def_static("load", &fm::load_checkpoint, py::arg("path"))
      .def_property_readonly("frames_processed", [](const fm::MapState& s) { return s.frames_processed; })
      .def_property_readonly("keyframes", [](const fm::MapState& s) { return s.keyframes.size(); })
      .def_property_readonly("res", [](const fm::MapState& s) { return s.field.shape().res; })
      .def_property_readonly("param_count", [](const fm::MapState& s) { return s.field.params().size(); })
      .def(
          "query_density",
          [](const fm::MapState& s, const Points& pts) {
            const std::vector<fm::Vec3> p = to_points(pts);
            py::array_t<double> out(static_cast<py::ssize_t>(p.size()));
            auto o = out.mutable_unchecked<1>();
            for (std::size_t i = 0; i < p.size(); ++i) o(i) = s.field.query_density(p[i]);
            return out;
          },
          py::arg("points"), "Raw density at world points, bias included.")
      .def(
          "query_occupancy",
          [](const fm::MapState& s, const Points& pts) {
            const std::vector<fm::Vec3> p = to_points(pts);
            py::array_t<double> out(static_cast<py::ssize_t>(p.size()));
            auto o = out.mutable_unchecked<1>();
            for (std::size_t i = 0; i < p.size(); ++i) o(i) = fm::occupancy(s.field.query_density(p[i]));
            return out;
          },
          py::arg("points"));
}
