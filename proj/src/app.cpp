#include "ldr/app.hpp"

#include <Eigen/Core>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace ldr {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Exclusive lock file in the output directory; removed on scope exit.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) throw Error("output directory " + dir.string() + " is in use (remove " + path_.string() +
                                  " if no other run is active)");
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

Matrix as_image(const Vector& v, Index rows, Index cols) { return Eigen::Map<const Matrix>(v.data(), rows, cols); }

bool is_image(const Dataset& d) { return d.image_rows > 0; }

// Decoded vectors become P5 images for image data and CSV rows otherwise.
void write_sample(const Dataset& data, const fs::path& stem, const Vector& v, std::ofstream& csv_rows) {
  if (is_image(data)) {
    write_pgm(stem.string() + ".pgm", as_image(v, data.image_rows, data.image_cols), -1.0, 1.0);
  } else {
    for (Index i = 0; i < v.size(); ++i) csv_rows << (i ? "," : "") << num(v(i));
    csv_rows << "\n";
  }
}

struct Features {
  Batch batch;
  Matrix z;
  Matrix z_hat;
};

Features train_features(const Model& model, const Dataset& data) {
  Features f;
  f.batch = make_batch(data, data.class_sorted(data.train));
  f.z = encode_values(model.encoder, f.batch.x);
  f.z_hat = encode_values(model.encoder, decode_values(model.decoder, f.z));
  return f;
}

void write_heatmap(const fs::path& dir, const AlignmentReport& rep) {
  write_pgm(dir / "heatmap.pgm", rep.cosine, 0.0, 1.0);
  std::ofstream csv(dir / "alignment.csv");
  csv << "row_class,col_class,mean_abs_cosine\n";
  for (Index a = 0; a < rep.block_means.rows(); ++a)
    for (Index b = 0; b < rep.block_means.cols(); ++b) csv << a << "," << b << "," << num(rep.block_means(a, b)) << "\n";
  csv << "on_block_mean," << num(rep.on_block_mean) << "\n";
  csv << "off_block_mean," << num(rep.off_block_mean) << "\n";
}

Index first_of_class(const Dataset& data, int cls) {
  for (Index i : data.train) {
    if (data.labels[static_cast<std::size_t>(i)] == cls) return i;
  }
  throw DataError("no training sample of class " + std::to_string(cls));
}

}  // namespace

std::string metrics_row(const TrainRecord& r) {
  std::ostringstream os;
  os << r.iteration << "," << num(r.terms.delta_r_z) << "," << num(r.terms.delta_r_zhat) << ","
     << num(r.terms.pairwise_sum) << "," << num(r.terms.total) << "," << num(r.lr) << "," << num(r.off_block_mean)
     << "," << num(r.on_block_mean) << "," << num(r.nsc_train) << "," << num(r.nsc_heldout);
  return os.str();
}

ExperimentConfig with_overrides(ExperimentConfig config, const RunOptions& opts) {
  if (opts.seed) config.seed = *opts.seed;
  if (opts.out) config.output = fs::absolute(*opts.out).lexically_normal();
  if (opts.strict) config.strict = true;
  config.trainer.seed = config.seed;
  return config;
}

Dataset build_dataset(const ExperimentConfig& config) {
  const DataConfig& dc = config.data;
  Dataset data;
  if (dc.source == DataSource::Synthetic) {
    SubspaceSpec spec{dc.ambient_dim, dc.class_dims, dc.noise, dc.warp};
    data = gen_subspaces(spec, dc.per_class, config.seed);
  } else {
    for (const fs::path& p : {dc.images, dc.labels}) {
      if (!fs::exists(p)) throw DataError("data file not found: " + p.string());
    }
    IdxLoadOptions opts;
    opts.class_filter = dc.classes;
    opts.per_class_cap = dc.per_class;
    opts.downsample_to = dc.downsample;
    data = load_idx_images(dc.images, dc.labels, opts);
    if (!dc.modes.empty()) data = apply_modes(data, dc.modes, config.seed + 1);
  }
  split_stratified(data, dc.heldout_fraction, config.seed + 2);
  return data;
}

Model build_model(const ExperimentConfig& config, const Dataset& data) {
  const NetConfig& nc = config.net;
  auto enc = mlp_layers(data.dim(), nc.encoder_hidden, nc.feature_dim, nc.encoder_activation, ad::Activation::None,
                        nc.spectral_norm);
  auto dec = mlp_layers(nc.feature_dim, nc.decoder_hidden, data.dim(), nc.decoder_activation, nc.decoder_output);
  return init_model(std::move(enc), std::move(dec), config.trainer.objective, data.num_classes, config.seed + 3);
}

TrainOutcome run_train(const ExperimentConfig& config, std::ostream& log, const std::optional<fs::path>& resume) {
  const fs::path out = config.output;
  fs::create_directories(out);
  DirLock lock(out);
  write_text(out / "config.resolved", echo_config(config));

  Dataset data = build_dataset(config);
  write_manifest(out / "manifest.txt",
                 {{"seed", std::to_string(config.seed)},
                  {"source", config.data.source == DataSource::Idx ? "idx" : "synthetic"},
                  {"dim", std::to_string(data.dim())},
                  {"classes", std::to_string(data.num_classes)},
                  {"samples", std::to_string(data.size())},
                  {"train_count", std::to_string(data.train.size())},
                  {"heldout_count", std::to_string(data.heldout.size())},
                  {"train_hash", std::to_string(hash_indices(data.train))},
                  {"heldout_hash", std::to_string(hash_indices(data.heldout))},
                  {"normalization", data.normalization}});

  Trainer trainer(build_model(config, data), config.trainer, data);
  bool append = false;
  if (resume) {
    const CheckpointData ck = load_checkpoint(*resume);
    restore(ck, trainer.model(), &trainer.adam(Player::Encoder), &trainer.adam(Player::Decoder));
    trainer.set_iteration(static_cast<Index>(ck.iteration));
    append = fs::exists(out / "metrics.csv");
    log << "resumed from " << resume->string() << " at iteration " << ck.iteration << "\n";
  }

  std::ofstream metrics(out / "metrics.csv", append ? std::ios::app : std::ios::trunc);
  if (!metrics) throw Error("cannot write " + (out / "metrics.csv").string());
  if (!append) metrics << kMetricsVersion << "\n" << kMetricsHeader << "\n" << std::flush;

  bool skip_first = append;
  trainer.train(
      [&](const TrainRecord& r) {
        log << "iter " << r.iteration << "  dR(Z) " << r.terms.delta_r_z << "  dR(Zh) " << r.terms.delta_r_zhat
            << "  pairs " << r.terms.pairwise_sum << "  off/on " << r.off_block_mean << "/" << r.on_block_mean
            << "  nsc " << r.nsc_train << "/" << r.nsc_heldout << "\n";
        // A resumed run re-evaluates the checkpoint iteration, already on disk.
        if (skip_first) {
          skip_first = false;
          return;
        }
        metrics << metrics_row(r) << "\n" << std::flush;
      },
      [&](const Trainer& t) { save_checkpoint(out / "latest.ckpt", t); });
  save_checkpoint(out / "final.ckpt", trainer);

  const Features f = train_features(trainer.model(), data);
  const AlignmentReport rep = alignment_heatmap(f.z, f.z_hat, f.batch.labels, data.num_classes);
  write_pgm(out / "heatmap.pgm", rep.cosine, 0.0, 1.0);

  const TrainLog& tl = trainer.log();
  const TrainRecord& last = tl.records.back();
  std::ostringstream summary;
  summary << "iterations = " << trainer.iteration() << "\n"
          << "pairwise_sum = " << num(last.terms.pairwise_sum) << "\n"
          << "off_block_mean = " << num(last.off_block_mean) << "\n"
          << "on_block_mean = " << num(last.on_block_mean) << "\n"
          << "nsc_train = " << num(last.nsc_train) << "\n"
          << "nsc_heldout = " << num(last.nsc_heldout) << "\n"
          << "decoder_collapse = " << (tl.collapse_flagged ? "true" : "false") << "\n";
  if (tl.collapse_flagged) summary << "collapse_iteration = " << tl.collapse_iteration << "\n";
  write_text(out / "summary.txt", summary.str());
  if (tl.collapse_flagged) {
    log << "warning: decoder collapse flagged at iteration " << tl.collapse_iteration << "\n";
  }

  TrainOutcome outcome{trainer.model(), tl, {}, out};
  outcome.data = std::move(data);
  return outcome;
}

AnalyzeTask parse_task(const std::string& name) {
  if (name == "heatmap") return AnalyzeTask::Heatmap;
  if (name == "sample") return AnalyzeTask::Sample;
  if (name == "interpolate") return AnalyzeTask::Interpolate;
  if (name == "classify") return AnalyzeTask::Classify;
  if (name == "components") return AnalyzeTask::Components;
  throw ConfigError("unknown analysis task '" + name + "' (heatmap|sample|interpolate|classify|components)");
}

fs::path run_analyze(const fs::path& checkpoint, const ExperimentConfig& config, AnalyzeTask task,
                     const fs::path& out_dir, std::ostream& log) {
  const CheckpointData ck = load_checkpoint(checkpoint);
  const Dataset data = build_dataset(config);
  Model model = build_model(config, data);
  restore(ck, model);
  fs::create_directories(out_dir);
  DirLock lock(out_dir);
  const AnalysisConfig& ac = config.analysis;
  const Features f = train_features(model, data);
  const int k = data.num_classes;

  switch (task) {
    case AnalyzeTask::Heatmap: {
      const AlignmentReport rep = alignment_heatmap(f.z, f.z_hat, f.batch.labels, k);
      write_heatmap(out_dir, rep);
      log << "off/on block mean " << rep.off_block_mean << "/" << rep.on_block_mean << "\n";
      break;
    }
    case AnalyzeTask::Sample: {
      const auto models = fit_subspaces(f.z, f.batch.labels, k, config.trainer.rank_rule);
      std::mt19937_64 rng(config.seed);
      std::ofstream index(out_dir / "samples.csv");
      std::ofstream rows;
      index << "file,class,draw,degenerate\n";
      if (!is_image(data)) rows.open(out_dir / "sample_vectors.csv");
      for (int j = 0; j < k; ++j) {
        Matrix feats(f.z.rows(), ac.samples_per_class);
        std::vector<bool> degenerate;
        for (Index s = 0; s < ac.samples_per_class; ++s) {
          const FeatureSample fs_ = sample_feature(models[static_cast<std::size_t>(j)], ac.sample_range, rng);
          feats.col(s) = fs_.feature;
          degenerate.push_back(fs_.degenerate);
        }
        if (!degenerate.empty() && degenerate.front()) log << "warning: class " << j << " has a rank-0 model\n";
        const Matrix decoded = decode_values(model.decoder, feats);
        for (Index s = 0; s < ac.samples_per_class; ++s) {
          const std::string stem = "class" + std::to_string(j) + "_" + std::to_string(s);
          write_sample(data, out_dir / stem, decoded.col(s), rows);
          index << (is_image(data) ? stem + ".pgm" : "sample_vectors.csv") << "," << j << "," << s << ","
                << (degenerate[static_cast<std::size_t>(s)] ? 1 : 0) << "\n";
        }
      }
      break;
    }
    case AnalyzeTask::Interpolate: {
      const Index a = ac.interpolate_from >= 0 ? ac.interpolate_from : first_of_class(data, 0);
      const Index b = ac.interpolate_to >= 0 ? ac.interpolate_to : first_of_class(data, std::min(1, k - 1));
      if (a >= data.size() || b >= data.size()) throw ConfigError("interpolation endpoint outside the dataset");
      const auto frames =
          interpolate(data.x.col(a), data.x.col(b), ac.interpolate_steps, model.encoder, model.decoder);
      std::ofstream index(out_dir / "interpolation.csv");
      std::ofstream rows;
      if (!is_image(data)) rows.open(out_dir / "interpolation_vectors.csv");
      index << "file,weight,skipped\n";
      for (std::size_t i = 0; i < frames.size(); ++i) {
        const std::string stem = "frame" + std::to_string(i);
        if (!frames[i].skipped) write_sample(data, out_dir / stem, frames[i].sample, rows);
        index << (frames[i].skipped ? "" : (is_image(data) ? stem + ".pgm" : "interpolation_vectors.csv")) << ","
              << num(frames[i].weight) << "," << (frames[i].skipped ? 1 : 0) << "\n";
      }
      break;
    }
    case AnalyzeTask::Classify: {
      const auto models = fit_subspaces(f.z, f.batch.labels, k, config.trainer.rank_rule);
      std::ofstream csv(out_dir / "classify.csv");
      csv << "split,samples,accuracy\n";
      const double train_acc = accuracy(classify_nearest_subspace(f.z, models), f.batch.labels);
      csv << "train," << f.batch.labels.size() << "," << num(train_acc) << "\n";
      log << "nearest-subspace accuracy: train " << train_acc;
      if (!data.heldout.empty()) {
        const Batch hb = make_batch(data, data.heldout);
        const double acc = accuracy(classify_nearest_subspace(encode_values(model.encoder, hb.x), models), hb.labels);
        csv << "heldout," << hb.labels.size() << "," << num(acc) << "\n";
        log << ", held-out " << acc;
      }
      log << "\n";
      csv << "\nclass,rank\n";
      for (const auto& m : models) csv << m.label << "," << m.rank() << "\n";
      break;
    }
    case AnalyzeTask::Components: {
      const auto models = fit_subspaces(f.z, f.batch.labels, k, config.trainer.rank_rule);
      const Matrix x_hat = decode_values(model.decoder, f.z);
      std::ofstream index(out_dir / "components.csv");
      std::ofstream rows;
      if (!is_image(data)) rows.open(out_dir / "component_vectors.csv");
      index << "file,class,component,rank_in_component,sample,score,truncated\n";
      for (int j = 0; j < k; ++j) {
        std::vector<Index> cols;
        for (std::size_t i = 0; i < f.batch.labels.size(); ++i) {
          if (f.batch.labels[i] == j) cols.push_back(static_cast<Index>(i));
        }
        Matrix zj(f.z.rows(), static_cast<Index>(cols.size()));
        Matrix xj(x_hat.rows(), static_cast<Index>(cols.size()));
        for (std::size_t i = 0; i < cols.size(); ++i) {
          zj.col(static_cast<Index>(i)) = f.z.col(cols[i]);
          xj.col(static_cast<Index>(i)) = x_hat.col(cols[i]);
        }
        const SubspaceModel& sm = models[static_cast<std::size_t>(j)];
        for (Index l = 0; l < std::min(ac.components, sm.rank()); ++l) {
          const ComponentMatches cm = nearest_to_component(zj, xj, sm, l, ac.top_m, ac.signed_components);
          for (std::size_t r = 0; r < cm.matches.size(); ++r) {
            const std::string stem =
                "class" + std::to_string(j) + "_pc" + std::to_string(l) + "_" + std::to_string(r);
            write_sample(data, out_dir / stem, cm.matches[r].decoded, rows);
            index << (is_image(data) ? stem + ".pgm" : "component_vectors.csv") << "," << j << "," << l << "," << r
                  << "," << f.batch.indices[static_cast<std::size_t>(cols[static_cast<std::size_t>(cm.matches[r].column)])] << ","
                  << num(cm.matches[r].score) << "," << (cm.truncated ? 1 : 0)
                  << "\n";
          }
        }
      }
      break;
    }
  }
  return out_dir;
}

namespace {

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_code::kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return exit_code::kData;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return exit_code::kCheckpoint;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return exit_code::kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kFailure;
  }
}

}  // namespace

int cmd_train(const fs::path& config_path, const RunOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = with_overrides(load_config(config_path), opts);
    const TrainOutcome outcome = run_train(config, log, opts.resume);
    if (config.strict && outcome.log.collapse_flagged) {
      err << "decoder collapse flagged at iteration " << outcome.log.collapse_iteration << " (strict mode)\n";
      return exit_code::kCollapse;
    }
    return exit_code::kOk;
  });
}

int cmd_analyze(const fs::path& checkpoint, const fs::path& config_path, const std::string& task,
                const RunOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const AnalyzeTask t = parse_task(task);
    const ExperimentConfig config = with_overrides(load_config(config_path), opts);
    const fs::path out = opts.out ? config.output : config.output / ("analysis-" + task);
    run_analyze(checkpoint, config, t, out, log);
    log << "wrote " << out.string() << "\n";
    return exit_code::kOk;
  });
}

int configure_threads() {
  int threads = 1;
  if (const char* v = std::getenv("LDR_THREADS"); v != nullptr && *v != '\0') {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1 || n > 1024) throw ConfigError("LDR_THREADS must be a positive integer, got '" + std::string(v) + "'");
    threads = static_cast<int>(n);
  }
  Eigen::setNbThreads(threads);
  return threads;
}

}  // namespace ldr
