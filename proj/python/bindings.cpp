#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "realdesc/backbone.hpp"
#include "realdesc/batching.hpp"
#include "realdesc/benchmarks.hpp"
#include "realdesc/contrastive.hpp"
#include "realdesc/descriptions.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/name_filter.hpp"
#include "realdesc/paco.hpp"
#include "realdesc/zeroshot.hpp"

namespace py = pybind11;
using namespace realdesc;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const FloatArray& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<float*>(a.data()), shape, torch::kFloat32).clone();
}

FloatArray to_numpy(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat32).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  FloatArray out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<float>(), static_cast<std::size_t>(c.numel()) * sizeof(float));
  return out;
}

py::array_t<int64_t> to_numpy_long(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kLong).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<int64_t> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<int64_t>(), static_cast<std::size_t>(c.numel()) * sizeof(int64_t));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Zero-shot classification by description";

  static py::exception<Error> base(m, "RealdescError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  py::class_<Backbone>(m, "Backbone")
      .def_static("load", &Backbone::load, py::arg("identifier"))
      .def_property_readonly("id", &Backbone::id)
      .def_property_readonly("image_size", &Backbone::image_size)
      .def_property_readonly("embed_dim", &Backbone::embed_dim)
      .def_property_readonly("config", [](const Backbone& b) { return b.config().to_json().dump(); })
      .def("save", [](const Backbone& b, const std::filesystem::path& dir) { b.save(dir); })
      .def("encode_texts",
           [](const Backbone& b, const std::vector<std::string>& texts) {
             torch::NoGradGuard ng;
             return to_numpy(b.encode_texts(texts));
           })
      .def("encode_pixels",
           [](const Backbone& b, const FloatArray& pixels) {
             torch::NoGradGuard ng;
             return to_numpy(b.model().encode_pixels(to_tensor(pixels)));
           })
      .def("token_batch",
           [](const Backbone& b, const std::vector<std::string>& texts) {
             auto [ids, eos] = b.token_batch(texts);
             return py::make_tuple(to_numpy_long(ids), to_numpy_long(eos));
           })
      .def("parameter_names", [](const Backbone& b) {
        std::vector<std::string> names;
        for (const auto& [k, v] : b.state()) names.push_back(k);
        return names;
      });

  m.def("filter_name",
        [](const std::string& class_name, const std::string& sentence, const std::string& placeholder) {
          return filter_name(class_name, sentence, placeholder);
        },
        py::arg("class_name"), py::arg("sentence"), py::arg("placeholder"));

  m.def("verify_file", [](const std::filesystem::path& path) {
    const auto report = verify_name_free(DescriptionFile::load(path));
    return py::dict(py::arg("certified") = report.certified(), py::arg("residuals") = report.residuals.size(),
                    py::arg("sentences_checked") = report.sentences_checked);
  });

  m.def("classify", [](const FloatArray& image, const FloatArray& prototypes) {
    PrototypeIndex idx;
    idx.prototypes = to_tensor(prototypes);
    for (int64_t c = 0; c < idx.prototypes.size(0); ++c) idx.classes.push_back(std::to_string(c));
    return classify(to_tensor(image), idx).index;
  });

  m.def("top_k_indices", &top_k_indices, py::arg("scores"), py::arg("k"));
  m.def("unique_class_batches", &unique_class_batches, py::arg("class_of_pair"), py::arg("batch_size"),
        py::arg("seed"), py::arg("rounds") = 1);
  m.def("contrastive_loss", [](const FloatArray& img, const FloatArray& txt, double temperature) {
    return contrastive_loss(to_tensor(img), to_tensor(txt), temperature).item<double>();
  });

  m.def("benchmarks", [] {
    std::vector<std::string> out;
    for (auto b : all_benchmarks()) out.push_back(to_string(b));
    return out;
  });
  m.def("class_list", [](const std::string& name) { return load_benchmark_spec(parse_benchmark(name)).class_list; });
}
