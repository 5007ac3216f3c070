#include <memory>
#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "climemu/cli.hpp"
#include "climemu/error.hpp"
#include "climemu/geodesic_grid.hpp"
#include "climemu/hash.hpp"
#include "climemu/records.hpp"
#include "climemu/service.hpp"
#include "climemu/tipping.hpp"

namespace py = pybind11;
using namespace climemu;

namespace {

py::dict grid_dict(int level) {
  const auto& g = grid_for_level(level);
  std::vector<double> lat, lon;
  for (const auto& v : g.vertices()) {
    lat.push_back(v.lat);
    lon.push_back(v.lon);
  }
  py::dict d;
  d["level"] = level;
  d["lat"] = lat;
  d["lon"] = lon;
  d["area_weights"] = std::vector<double>(g.area_weights().begin(), g.area_weights().end());
  d["parent_map"] = std::vector<std::int32_t>(g.parent_map().begin(), g.parent_map().end());
  return d;
}

py::tuple cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = 0;
  {
    py::gil_scoped_release release;
    code = run_cli(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_climemu, m) {
  m.doc() = "Climate-intervention emulation workbench";

  py::register_exception<Error>(m, "ClimemuError");

  m.def("vertex_count", &vertex_count, py::arg("level"));
  m.def("grid", &grid_dict, py::arg("level"),
        "Vertex coordinates, area weights and parent map of the icosphere at `level`.");
  m.def("run_cli", &cli, py::arg("args"), "Runs the command-line driver; returns (exit_code, stdout, stderr).");
  m.def("csv_escape", &csv_escape);
  m.def("csv_header", [] { return std::string(kCsvHeader); });
  m.def("fnv1a64", [](const py::bytes& b) {
    const std::string s = b;
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
  });
  m.def("default_projections", &default_projections);
  m.def("default_sites_json", [] { return sites_to_json(default_sites()).dump(2); });

  py::class_<Service, std::shared_ptr<Service>>(m, "Session")
      .def(py::init([](const std::filesystem::path& anomaly_dir, std::optional<std::filesystem::path> suite_dir,
                       std::optional<std::filesystem::path> shift_dir, std::optional<std::filesystem::path> raw_dir,
                       const std::filesystem::path& records_path) {
             ServiceOptions o;
             o.anomaly_dir = anomaly_dir;
             o.suite_dir = suite_dir;
             o.shift_dir = shift_dir;
             o.raw_dir = raw_dir;
             o.records_path = records_path;
             return std::make_shared<Service>(load_session(o));
           }),
           py::arg("anomaly_dir"), py::arg("suite_dir") = py::none(), py::arg("shift_dir") = py::none(),
           py::arg("raw_dir") = py::none(), py::arg("records_path") = "records.jsonl")
      .def(
          "handle",
          [](Service& s, const std::string& method, const std::string& path,
             const std::map<std::string, std::string>& query, const std::string& body) {
            HttpResponse r;
            {
              py::gil_scoped_release release;
              r = s.handle({method, path, query, body});
            }
            return py::make_tuple(r.status, r.content_type, r.body);
          },
          py::arg("method"), py::arg("path"), py::arg("query") = std::map<std::string, std::string>{},
          py::arg("body") = "", "Dispatches one API request; returns (status, content_type, body).");
}
