#include "s2ig/evaluation.hpp"

#include <fstream>
#include <sstream>

#include "s2ig/error.hpp"
#include "s2ig/feature_cache.hpp"
#include "s2ig/hash.hpp"
#include "s2ig/image_io.hpp"

namespace s2ig {
namespace fs = std::filesystem;

namespace {

torch::Tensor load_resized(const fs::path& path, int64_t size) {
  return resize_images(read_image(path).unsqueeze(0), size).squeeze(0);
}

}  // namespace

void write_generated_index(const fs::path& dir, const std::vector<GeneratedRecord>& records) {
  fs::create_directories(dir);
  std::ofstream out(dir / kGeneratedIndexName, std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / kGeneratedIndexName).string());
  out << "image_path\tclass_id\tsource_audio\n";
  for (const auto& r : records) out << r.image_path << '\t' << r.class_id << '\t' << r.source_audio << '\n';
}

std::vector<GeneratedRecord> read_generated_index(const fs::path& dir) {
  const auto path = dir / kGeneratedIndexName;
  std::ifstream in(path);
  if (!in) throw ValidationError("no " + std::string(kGeneratedIndexName) + " in " + dir.string());
  std::vector<GeneratedRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream fields(line);
    GeneratedRecord r;
    std::string cls;
    if (!std::getline(fields, r.image_path, '\t') || !std::getline(fields, cls, '\t')) {
      throw ParseError(path, line_no, "expected image_path<TAB>class_id<TAB>source_audio");
    }
    std::getline(fields, r.source_audio);
    try {
      std::size_t used = 0;
      r.class_id = std::stoi(cls, &used);
      if (used != cls.size() || r.class_id < -1) throw std::invalid_argument(cls);
    } catch (const std::exception&) {
      throw ParseError(path, line_no, "invalid class id '" + cls + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

LabeledImages load_labeled_images(const fs::path& source, int64_t size, Split split) {
  LabeledImages out;
  std::vector<torch::Tensor> images;
  if (fs::is_directory(source) && fs::exists(source / kGeneratedIndexName)) {
    Sha256 digest;
    for (const auto& r : read_generated_index(source)) {
      const auto path = source / r.image_path;
      if (!fs::is_regular_file(path)) throw ValidationError("generated image missing: " + path.string());
      images.push_back(load_resized(path, size));
      out.classes.push_back(r.class_id);
      out.paths.push_back(path.string());
      digest.update(r.image_path);
      digest.update_file(path);
    }
    out.lineage = {{"source", fs::absolute(source).string()}, {"kind", "generated"}, {"sha256", digest.hex_digest()}};
  } else {
    const fs::path manifest = fs::is_directory(source) ? source / "manifest.tsv" : source;
    if (!fs::is_regular_file(manifest)) {
      throw ValidationError(source.string() + " is neither a manifest nor a directory with " +
                            kGeneratedIndexName + " or manifest.tsv");
    }
    for (const auto& e : load_manifest(manifest)) {
      if (e.split != split) continue;
      images.push_back(load_resized(e.image_path, size));
      out.classes.push_back(e.class_id);
      out.paths.push_back(e.image_path.string());
    }
    out.lineage = {{"source", fs::absolute(manifest).string()},
                   {"kind", "manifest"},
                   {"split", to_string(split)},
                   {"sha256", sha256_file(manifest)}};
  }
  if (images.empty()) throw ValidationError(source.string() + ": no images to evaluate");
  out.images = torch::stack(images);
  return out;
}

Matrix to_matrix(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous();
  if (c.dim() != 2) throw ValidationError("expected a 2-D tensor");
  return Eigen::Map<const Matrix>(c.data_ptr<double>(), c.size(0), c.size(1));
}

FeatureSet extract_features(FeatureBackbone& backbone, const LabeledImages& images) {
  const auto out = backbone.run(images.images);
  FeatureSet set;
  set.features = to_matrix(out.features);
  set.probabilities = to_matrix(out.probabilities);
  set.classes = images.classes;
  set.backbone = backbone.description();
  set.provenance = backbone.provenance();
  set.lineage = images.lineage;
  return set;
}

void save_feature_set(const fs::path& path, const FeatureSet& set) {
  FeatureCache cache;
  cache.metadata = {{"backbone", set.backbone}, {"provenance", set.provenance}, {"lineage", set.lineage}};
  Matrix classes(static_cast<Eigen::Index>(set.classes.size()), 1);
  for (std::size_t i = 0; i < set.classes.size(); ++i) classes(static_cast<Eigen::Index>(i), 0) = set.classes[i];
  cache.matrices.emplace_back("features", set.features);
  cache.matrices.emplace_back("probabilities", set.probabilities);
  cache.matrices.emplace_back("classes", classes);
  write_feature_cache(path, cache);
}

FeatureSet load_feature_set(const fs::path& path) {
  const auto cache = read_feature_cache(path);
  FeatureSet set;
  set.features = cache.get("features");
  set.probabilities = cache.get("probabilities");
  const auto& classes = cache.get("classes");
  if (classes.rows() != set.features.rows() || set.probabilities.rows() != set.features.rows()) {
    throw ValidationError(path.string() + ": feature cache matrices disagree on the number of images");
  }
  for (Eigen::Index i = 0; i < classes.rows(); ++i) set.classes.push_back(static_cast<int>(classes(i, 0)));
  set.backbone = cache.metadata.value("backbone", std::string());
  set.provenance = cache.metadata.value("provenance", std::string());
  set.lineage = cache.metadata.value("lineage", nlohmann::json::object());
  return set;
}

MetricReport compute_report(const FeatureSet& real, const FeatureSet& fake, const EvaluationSettings& settings) {
  if (real.backbone != fake.backbone) {
    throw CompatibilityError("real features come from '" + real.backbone + "' but fake features from '" +
                             fake.backbone + "'");
  }
  MetricReport report;
  const auto is = inception_score(fake.probabilities, settings.is_splits);
  report.is_mean = is.mean;
  report.is_std = is.std;
  report.fid = frechet_distance(real.features, fake.features);

  const auto pool = select_query_pool(real.classes, settings.queries_per_class, settings.query_seed);
  Matrix queries(static_cast<Eigen::Index>(pool.size()), real.features.cols());
  std::vector<int> query_classes;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    queries.row(static_cast<Eigen::Index>(k)) = real.features.row(static_cast<Eigen::Index>(pool[k]));
    query_classes.push_back(real.classes[pool[k]]);
  }
  report.map = retrieval_map(queries, query_classes, fake.features, fake.classes).map;

  report.is_splits = settings.is_splits;
  report.query_pool_seed = settings.query_seed;
  report.queries_per_class = settings.queries_per_class;
  report.num_queries = static_cast<int64_t>(pool.size());
  report.num_real = real.features.rows();
  report.num_fake = fake.features.rows();
  report.backbone_provenance = fake.provenance;
  report.backbone_description = fake.backbone;
  report.inputs = {{"real", real.lineage}, {"fake", fake.lineage}};
  return report;
}

}  // namespace s2ig
