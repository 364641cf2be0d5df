#include "modnet/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "modnet/errors.hpp"

namespace modnet {

double evaluate(Composite& net, const LabeledDataset& ds, int limit) {
  const std::size_t n = limit > 0 ? std::min<std::size_t>(limit, ds.size()) : ds.size();
  if (n == 0) throw DataError("evaluate called on an empty split");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += net.predict(ds.images[i]) == ds.labels[i];
  return static_cast<double>(correct) / static_cast<double>(n);
}

std::string Trainer::rng_state() const {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void Trainer::restore_rng(const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw DataError("cannot restore RNG state");
}

Trainer make_trainer(const ModuleSpec& base_spec, const Shape& input_shape, int num_classes,
                     OptimizerKind kind, OptimizerHyper hyper, double augment, std::uint64_t seed) {
  Trainer t;
  BuiltModule base = build_module(base_spec, input_shape, seed);
  t.net = compose_finetune(base, num_classes);
  std::vector<const Tensor*> shapes;
  for (int id : t.net.trainable()) shapes.push_back(&t.net.graph.value(id));
  t.opt = OptimizerState::init(kind, hyper, shapes);
  t.rng.seed(seed + 1);
  t.augment = augment;
  return t;
}

Trainer trainer_from_checkpoint(const LoadedCheckpoint& loaded, double augment) {
  Trainer t;
  t.net = loaded.net;
  t.opt = loaded.opt;
  t.step = loaded.meta.step;
  t.restore_rng(loaded.meta.rng_state);
  t.augment = augment;
  return t;
}

namespace {

// Accumulates node gradients over a batch, then hands the mean to the
// optimizer.
struct GradBatch {
  std::vector<int> ids;
  std::vector<Tensor> sums;

  explicit GradBatch(const Composite& net) : ids(net.trainable()) {
    for (int id : ids) sums.emplace_back(net.graph.value(id).shape());
  }
  void reset() {
    for (Tensor& t : sums) t.fill(0.0);
  }
  void accumulate(const Composite& net) {
    for (std::size_t i = 0; i < ids.size(); ++i) sums[i].array() += net.graph.grad(ids[i]).array();
  }
  void step(Composite& net, OptimizerState& opt, double scale) {
    for (Tensor& t : sums) t.array() *= scale;
    optimizer_step(net.graph, ids, sums, opt);
  }
};

double run_batch(Composite& net, OptimizerState& opt, GradBatch& grads,
                 const std::vector<const Tensor*>& images, const std::vector<int>& labels) {
  grads.reset();
  double loss_sum = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    net.set_example(*images[i], labels[i]);
    loss_sum += net.forward_loss();
    net.graph.backward(net.loss_id);
    grads.accumulate(net);
  }
  const double mean_loss = loss_sum / static_cast<double>(images.size());
  if (!std::isfinite(mean_loss))
    throw NumericError("non-finite training loss; aborting");
  grads.step(net, opt, 1.0 / static_cast<double>(images.size()));
  return mean_loss;
}

}  // namespace

void train_steps(Trainer& t, const LabeledDataset& train, long steps, int batch_size,
                 long log_every) {
  if (train.size() == 0) throw DataError("training split is empty");
  GradBatch grads(t.net);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  std::vector<Tensor> augmented(batch_size);
  std::vector<const Tensor*> images(batch_size);
  std::vector<int> labels(batch_size);

  for (long s = 0; s < steps; ++s) {
    for (int b = 0; b < batch_size; ++b) {
      const std::size_t idx = pick(t.rng);
      labels[b] = train.labels[idx];
      if (t.augment > 0) {
        augmented[b] = augment_shift_zoom(train.images[idx], t.augment, t.rng);
        images[b] = &augmented[b];
      } else {
        images[b] = &train.images[idx];
      }
    }
    const double loss = run_batch(t.net, t.opt, grads, images, labels);
    ++t.step;
    if (log_every > 0 && (t.step % log_every == 0))
      std::fprintf(stderr, "step %ld loss %.4f\n", t.step, loss);
  }
}

double train_on_batch(Composite& net, OptimizerState& opt, const LabeledDataset& ds,
                      const std::vector<int>& batch) {
  if (batch.empty()) throw DataError("empty batch");
  GradBatch grads(net);
  std::vector<const Tensor*> images;
  std::vector<int> labels;
  images.reserve(batch.size());
  labels.reserve(batch.size());
  for (int idx : batch) {
    images.push_back(&ds.images[idx]);
    labels.push_back(ds.labels[idx]);
  }
  return run_batch(net, opt, grads, images, labels);
}

void write_curve_csv(const std::string& path, const std::vector<CurveRow>& rows) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out << "seed,topology,per_class,examples_seen,batch_index,test_accuracy\n";
    char buf[32];
    for (const CurveRow& r : rows) {
      std::snprintf(buf, sizeof buf, "%.17g", r.test_accuracy);
      out << r.seed << ',' << r.topology << ',' << r.per_class << ',' << r.examples_seen << ','
          << r.batch_index << ',' << buf << '\n';
    }
    if (!out) throw DataError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + path + " into place: " + ec.message());
}

std::vector<CurveRow> read_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "seed,topology,per_class,examples_seen,batch_index,test_accuracy")
    throw DataError(path + " is not a learning-curve CSV");
  std::vector<CurveRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    CurveRow r;
    char c;
    std::getline(ls, line, ',');
    r.seed = std::stoull(line);
    std::getline(ls, r.topology, ',');
    ls >> r.per_class >> c >> r.examples_seen >> c >> r.batch_index >> c >> r.test_accuracy;
    if (!ls) throw DataError(path + " has a malformed row");
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}
constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ULL;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return fnv1a(fnv1a(kFnvBasis, seed), salt);
}

}  // namespace

TransferResult transfer_compare(const BuiltModule& pretrained_base,
                                const LabeledDataset& target_train,
                                const LabeledDataset& target_test, const TransferOptions& opts) {
  if (pretrained_base.spec.frozen)
    throw ContractError("pass the pretrained base unfrozen; freezing happens per topology");
  const int num_classes = target_train.num_classes;
  const Shape input_shape = pretrained_base.input_shape;

  const std::string module_arch =
      opts.module_arch.empty() ? arch_string(pretrained_base.spec) : opts.module_arch;
  const std::string stitch_arch = opts.stitch_arch.empty() ? module_arch : opts.stitch_arch;

  TransferResult result;
  bool frozen_hash_set = false;

  for (int n : opts.per_class) {
    LabeledDataset sub = subsample_per_class(target_train, n, derive_seed(opts.seed, n));
    BatchSchedule schedule =
        small_data_schedule(sub, std::min(opts.batch_per_class, n), opts.repeats,
                            derive_seed(opts.seed, 1000 + n));

    for (const std::string& topology : opts.topologies) {
      Composite net;
      if (topology == "finetune") {
        BuiltModule base = pretrained_base;  // trained starting values
        net = compose_finetune(base, num_classes);
      } else if (topology == "scratch") {
        // the uninitialized twin: same architecture, fresh weights
        BuiltModule fresh = build_module(pretrained_base.spec, input_shape,
                                         derive_seed(opts.seed, 3000 + n));
        net = compose_finetune(fresh, num_classes);
      } else if (topology == "two_towers") {
        BuiltModule base = pretrained_base;
        set_frozen(base, true);
        BuiltModule module;
        if (opts.module_init == "copy_base") {
          if (module_arch != arch_string(pretrained_base.spec))
            throw ConfigError("module_init copy_base needs the module arch to equal the base arch");
          module = pretrained_base;  // the same starting values the fine-tune run trains
        } else {
          module = build_module(parse_arch("module", module_arch), input_shape,
                                derive_seed(opts.seed, 4000 + n));
        }
        module.spec.name = "module";
        module.spec.frozen = false;
        net = compose_two_towers(base, module, num_classes, opts.lambda);
      } else if (topology == "stitch") {
        BuiltModule base = pretrained_base;
        set_frozen(base, true);
        ModuleSpec mspec = parse_arch("module", stitch_arch);
        net = compose_stitch(base, mspec, mirrored_pairs(mspec), num_classes,
                             derive_seed(opts.seed, 5000 + n), opts.lambda);
      } else {
        throw ConfigError("unknown topology '" + topology + "'");
      }

      std::vector<const Tensor*> shapes;
      for (int id : net.trainable()) shapes.push_back(&net.graph.value(id));
      OptimizerState opt = OptimizerState::init(opts.kind, opts.hyper, shapes);

      std::uint64_t stream = kFnvBasis;
      long examples_seen = 0;
      for (std::size_t b = 0; b < schedule.batches.size(); ++b) {
        const std::vector<int>& batch = schedule.batches[b];
        for (int r = 0; r < schedule.repeats; ++r) {
          train_on_batch(net, opt, sub, batch);
          for (int idx : batch) stream = fnv1a(stream, static_cast<std::uint64_t>(idx));
        }
        examples_seen += static_cast<long>(batch.size());
        CurveRow row;
        row.seed = opts.seed;
        row.topology = topology;
        row.per_class = n;
        row.examples_seen = examples_seen;
        row.batch_index = static_cast<int>(b);
        row.test_accuracy = evaluate(net, target_test, opts.eval_limit);
        result.rows.push_back(row);
        result.final_accuracy[{topology, n}] = row.test_accuracy;
      }
      result.stream_hashes[{topology, n}] = stream;

      if (topology == "two_towers" || topology == "stitch") {
        const std::uint32_t h = frozen_payload_hash(net);
        if (frozen_hash_set && h != result.frozen_hash)
          throw NumericError("frozen base payload changed between transfer cells");
        result.frozen_hash = h;
        frozen_hash_set = true;
      }
    }

    // matched streams: every topology must have consumed the same examples
    for (const std::string& topology : opts.topologies) {
      if (result.stream_hashes.at({topology, n}) != result.stream_hashes.at({opts.topologies[0], n}))
        throw NumericError("topologies consumed different batch streams at per_class " +
                           std::to_string(n));
    }
  }
  return result;
}

}  // namespace modnet
