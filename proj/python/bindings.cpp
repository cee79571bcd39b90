#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "xplat/circuits.hpp"
#include "xplat/datapipe.hpp"
#include "xplat/error.hpp"
#include "xplat/metrics.hpp"
#include "xplat/qsim.hpp"
#include "xplat/shadows.hpp"

namespace py = pybind11;
using namespace xplat;

namespace {

// JSON crosses the boundary as text; the Python wrapper handles (de)serialisation.
using Json = nlohmann::json;

qsim::DensityMatrix to_state(const qsim::DensityMatrix::Matrix& m) { return qsim::DensityMatrix::from_matrix(m); }

}  // namespace

PYBIND11_MODULE(_xplat, m) {
  m.doc() = "Noisy-device simulation, shadow estimators and dataset tooling";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ResourceError>(m, "ResourceError", PyExc_MemoryError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("builtin_profile", [](const std::string& name, int n) { return circuits::to_json(circuits::builtin_profile(name, n)).dump(); },
        py::arg("name"), py::arg("n_qubits"));
  m.def("depolarizing_profile",
        [](int n, double p) { return circuits::to_json(circuits::depolarizing_profile(n, p)).dump(); },
        py::arg("n_qubits"), py::arg("p"));
  m.def("sample_circuit",
        [](int n, int layers, std::uint64_t seed) {
          SeededRng rng(seed);
          return circuits::to_json(circuits::sample_circuit(n, layers, rng)).dump();
        },
        py::arg("n_qubits"), py::arg("layers"), py::arg("seed"));
  m.def("transpile",
        [](const std::string& circuit, const std::string& profile) {
          return circuits::to_json(circuits::transpile(circuits::circuit_from_json(Json::parse(circuit)),
                                                       circuits::profile_from_json(Json::parse(profile))))
              .dump();
        },
        py::arg("circuit"), py::arg("profile"));
  m.def("run_circuit",
        [](const std::string& circuit, const std::string& profile) {
          return qsim::run_circuit(circuits::circuit_from_json(Json::parse(circuit)),
                                   circuits::profile_from_json(Json::parse(profile)))
              .data();
        },
        py::arg("circuit"), py::arg("profile"));
  m.def("cross_fidelity",
        [](const qsim::DensityMatrix::Matrix& a, const qsim::DensityMatrix::Matrix& b) {
          return qsim::cross_fidelity(to_state(a), to_state(b));
        },
        py::arg("rho_i"), py::arg("rho_j"));
  m.def("purity", [](const qsim::DensityMatrix::Matrix& a) { return qsim::purity(to_state(a)); }, py::arg("rho"));
  m.def("shadow_fidelity",
        [](const qsim::DensityMatrix::Matrix& a, const qsim::DensityMatrix::Matrix& b, int shots, std::uint64_t seed,
           bool include_diagonal) {
          SeededRng rng(seed);
          const auto si = shadows::measure_random_pauli(to_state(a), shots, rng);
          const auto sj = shadows::measure_random_pauli(to_state(b), shots, rng);
          return shadows::cs_fidelity(si, sj, include_diagonal).value;
        },
        py::arg("rho_i"), py::arg("rho_j"), py::arg("shots"), py::arg("seed"), py::arg("include_diagonal") = false);
  m.def("build_dataset",
        [](const std::string& config, const std::string& out_dir) {
          py::gil_scoped_release release;
          return datapipe::build_dataset(datapipe::BuildConfig::from_json(Json::parse(config)), out_dir).dump();
        },
        py::arg("config"), py::arg("out_dir"));
  m.def("compute_metrics",
        [](const std::vector<double>& preds, const std::vector<double>& labels) {
          const auto r = compute_metrics(preds, labels);
          return py::dict(py::arg("mse") = r.mse, py::arg("r2") = r.r2, py::arg("rmse") = r.rmse,
                          py::arg("count") = r.count);
        },
        py::arg("preds"), py::arg("labels"));
}
