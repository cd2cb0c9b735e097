#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "instructtime/checkpoint.hpp"
#include "instructtime/datastore.hpp"
#include "instructtime/editing.hpp"
#include "instructtime/errors.hpp"
#include "instructtime/metrics.hpp"
#include "instructtime/synthgen.hpp"
#include "instructtime/text_embed.hpp"

namespace py = pybind11;
using namespace instructtime;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw InputError("expected a one-dimensional array");
  return {a.data(), a.data() + a.size()};
}

Array to_array(const std::vector<double>& v) { return Array(static_cast<py::ssize_t>(v.size()), v.data()); }

py::list records(const synth::Dataset& ds) {
  py::list out;
  for (const auto& ts : ds.series) {
    py::dict r;
    r["id"] = ts.id;
    r["values"] = to_array(ts.values);
    py::dict attrs;
    for (const auto& [k, v] : ts.attributes) attrs[py::str(k)] = v;
    r["attributes"] = attrs;
    r["split"] = std::string(synth::to_string(ts.split));
    r["description"] = ts.description ? py::object(py::str(*ts.description)) : py::object(py::none());
    out.append(r);
  }
  return out;
}

synth::SynthConfig synth_config(std::uint64_t seed, int samples, int length,
                                std::optional<std::vector<std::string>> families) {
  synth::SynthConfig c;
  c.seed = seed;
  c.samples_per_combination = samples;
  c.length = length;
  if (families) c.families = *families;
  c.validate();
  return c;
}

// Loaded checkpoint plus the metadata needed to expand templates.
class Model {
public:
  explicit Model(const std::filesystem::path& path)
      : loaded_(checkpoint::load_model(path)), fingerprint_(checkpoint::file_fingerprint(path)) {}

  py::list edit(const Array& series, const std::string& instruction, const std::vector<double>& weights,
                bool normalize) const {
    editing::EditRequest req;
    req.series = to_vector(series);
    req.instruction = instruction;
    req.weights = weights;
    req.normalization = normalize ? editing::Normalization::dataset_stats : editing::Normalization::none;
    req.validate();
    editing::EditResult res;
    {
      py::gil_scoped_release release;
      res = editing::edit(*loaded_.model, req);
    }
    py::list out;
    for (const auto& e : res.edits) out.append(py::make_tuple(e.w, to_array(e.values)));
    return out;
  }

  Array encode_series(const Array& series) const {
    return to_array(loaded_.model->encode_series(to_vector(series)).values);
  }
  Array encode_instruction(const std::string& text) const {
    return to_array(loaded_.model->encode_instruction(text).values);
  }
  std::string canonical(const std::string& attribute, const std::string& level) const {
    return loaded_.templates.canonical(attribute, level);
  }
  py::dict attributes() const {
    py::dict d;
    for (const auto& a : loaded_.header.schema.attributes()) d[py::str(a.name)] = a.levels;
    return d;
  }
  std::string config_json() const { return checkpoint::model_config_to_json(loaded_.model->config()); }
  const std::string& fingerprint() const { return fingerprint_; }
  std::string provider() const { return loaded_.header.provider_fingerprint; }

private:
  checkpoint::LoadedModel loaded_;
  std::string fingerprint_;
};

}  // namespace

PYBIND11_MODULE(_instructtime, m) {
  m.doc() = "Instruction-based time-series editing";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  auto ckpt = py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
  py::register_exception<CorruptCheckpointError>(m, "CorruptCheckpointError", ckpt.ptr());
  py::register_exception<TruncatedCheckpointError>(m, "TruncatedCheckpointError", ckpt.ptr());
  py::register_exception<FingerprintMismatchError>(m, "FingerprintMismatchError", ckpt.ptr());
  py::register_exception<FormatVersionError>(m, "FormatVersionError", ckpt.ptr());

  m.def(
      "dtw", [](const Array& x, const Array& y) { return metrics::dtw(to_vector(x), to_vector(y)); },
      py::arg("x"), py::arg("y"), "Dynamic time warping cost with squared pointwise differences.");
  m.def("rats", &metrics::rats, py::arg("p_target_edit"), py::arg("p_target_source"),
        "Log-ratio of target-attribute probabilities, edited over source.");
  m.def("spearman", &metrics::spearman, py::arg("a"), py::arg("b"));

  m.def(
      "generate_dataset",
      [](std::uint64_t seed, int samples, int length, std::optional<std::vector<std::string>> families) {
        return records(synth::generate_dataset(synth_config(seed, samples, length, families)));
      },
      py::arg("seed") = 0, py::arg("samples_per_combination") = 300, py::arg("length") = 200,
      py::arg("families") = py::none(), "Synthetic series as a list of dicts.");
  m.def(
      "write_dataset",
      [](const std::filesystem::path& out, std::uint64_t seed, int samples, int length,
         std::optional<std::vector<std::string>> families) {
        const auto c = synth_config(seed, samples, length, families);
        datastore::write_dataset_dir(synth::generate_dataset(c), out, c);
      },
      py::arg("out"), py::arg("seed") = 0, py::arg("samples_per_combination") = 300, py::arg("length") = 200,
      py::arg("families") = py::none(), "Generate and write a dataset directory.");
  m.def(
      "load_dataset", [](const std::filesystem::path& p) { return records(datastore::load_dataset(p)); },
      py::arg("path"));

  py::class_<text::HashEmbedder>(m, "HashEmbedder")
      .def(py::init<int, std::string>(), py::arg("width") = 768, py::arg("model_id") = "hash-unigram-bigram-v1")
      .def_property_readonly("width", &text::HashEmbedder::width)
      .def_property_readonly("fingerprint", &text::HashEmbedder::fingerprint)
      .def("embed", [](const text::HashEmbedder& e, const std::string& s) {
        return to_array(e.embed_batch({s}).front().values);
      });

  py::class_<Model>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("path"))
      .def("edit", &Model::edit, py::arg("series"), py::arg("instruction"),
           py::arg("weights") = std::vector<double>{1.0}, py::arg("normalize") = true,
           "List of (w, edited series) pairs.")
      .def("encode_series", &Model::encode_series, py::arg("series"))
      .def("encode_instruction", &Model::encode_instruction, py::arg("text"))
      .def("canonical", &Model::canonical, py::arg("attribute"), py::arg("level"))
      .def_property_readonly("attributes", &Model::attributes)
      .def_property_readonly("config_json", &Model::config_json)
      .def_property_readonly("fingerprint", &Model::fingerprint)
      .def_property_readonly("provider", &Model::provider);
}
