// dualenc: build retrieval tasks, train dual encoders, retrieve and evaluate.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "dualenc/dualenc.hpp"

namespace fs = std::filesystem;
using namespace dualenc;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

struct MissingFile : Error {
  using Error::Error;
};

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw MissingFile("no such file: " + p.string());
}

void require_task_dir(const fs::path& dir) {
  for (const char* f : {"queries.txt", "candidates.tsv", "qrels.txt"}) require_file(dir / f);
}

std::ofstream open_output(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw Error("cannot write " + p.string());
  return os;
}

std::string fixed2(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

void print_task_stats(const RetrievalTask& task) {
  std::cout << "queries=" << task.queries.size() << " candidates=" << task.candidates.size()
            << " mean_R=" << fixed2(task.mean_relevant()) << '\n';
}

std::vector<ItemId> sorted_queries(const RetrievalTask& task) {
  std::vector<ItemId> q = task.queries;
  std::sort(q.begin(), q.end());
  return q;
}

void write_runs(const fs::path& out, const std::vector<ItemId>& queries,
                const std::vector<RankedList>& lists, const std::string& tag) {
  auto os = open_output(out);
  for (std::size_t i = 0; i < queries.size(); ++i) write_run(os, queries[i], lists[i], tag);
}

// ---------------------------------------------------------------- build-task

struct BuildTaskOptions {
  std::string input, format = "quora-tsv", titles, out;
};

int cmd_build_task(const BuildTaskOptions& o) {
  require_file(o.input);
  if (!o.titles.empty()) require_file(o.titles);
  const auto pairs = load_pairs(o.input, parse_pair_format(o.format), o.titles);
  const auto task = build_retrieval_task(pairs);
  save_task(o.out, task);
  print_task_stats(task);
  return 0;
}

// --------------------------------------------------------------------- train

struct TrainOptions {
  std::string input, format = "quora-tsv", titles;
  std::vector<std::string> tasks;
  std::vector<std::string> task_weights;
  std::string loss = "softmax";
  double delta = 0.5;
  std::size_t dim = 300;
  std::size_t min_count = 2;
  double tune_fraction = 0.05;
  std::string pretrain;
  std::string out;
  TrainConfig config;
};

struct TaskSource {
  std::string name, format, path, titles;
};

TaskSource parse_task_source(const std::string& spec) {
  std::vector<std::string> f;
  std::size_t start = 0;
  while (true) {
    const auto c = spec.find(':', start);
    f.push_back(spec.substr(start, c == std::string::npos ? std::string::npos : c - start));
    if (c == std::string::npos) break;
    start = c + 1;
  }
  if (f.size() < 3 || f.size() > 4 || f[0].empty())
    throw Error("--task expects name:format:path[:titles], got '" + spec + "'");
  return {f[0], f[1], f[2], f.size() == 4 ? f[3] : std::string()};
}

int cmd_train(const TrainOptions& o) {
  std::vector<TaskSource> sources;
  if (!o.input.empty()) sources.push_back({"main", o.format, o.input, o.titles});
  for (const auto& t : o.tasks) sources.push_back(parse_task_source(t));
  if (sources.empty()) throw Error("train needs --input or at least one --task");
  o.config.validate();
  if (o.dim < 1) throw Error("--dim must be positive");

  std::map<std::string, double> weights;
  for (const auto& w : o.task_weights) {
    const auto eq = w.find('=');
    if (eq == std::string::npos) throw Error("--task-weight expects name=weight, got '" + w + "'");
    const double v = parse_double(w.substr(eq + 1), 0);
    if (!(v > 0.0)) throw Error("task weight must be positive: " + w);
    weights[w.substr(0, eq)] = v;
  }

  std::vector<std::vector<PairRecord>> records;
  std::vector<std::vector<Token>> corpus;
  for (const auto& s : sources) {
    require_file(s.path);
    if (!s.titles.empty()) require_file(s.titles);
    records.push_back(load_pairs(s.path, parse_pair_format(s.format), s.titles));
    for (const auto& p : records.back()) {
      corpus.push_back(tokenize(p.text1));
      corpus.push_back(tokenize(p.text2));
    }
  }
  const Vocabulary vocab = build_vocabulary(corpus, o.min_count);
  if (vocab.size() == 0) throw Error("empty vocabulary; lower --min-count");

  const LossKind loss = parse_loss_kind(o.loss);
  std::vector<TaskSpec> specs;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    std::vector<TrainingPair> positives, negatives;
    for (const auto& p : records[i]) {
      TrainingPair tp{vocab.ids(tokenize(p.text1)), vocab.ids(tokenize(p.text2)), p.positive() ? 1 : 0};
      (tp.label ? positives : negatives).push_back(std::move(tp));
    }
    auto [train, tune] = split_tuning(std::move(positives), o.tune_fraction, o.config.seed + i);
    TaskSpec spec;
    spec.name = sources[i].name;
    spec.loss_kind = loss;
    spec.triplet.delta = o.delta;
    spec.training_pairs = std::move(train);
    // Only the pairwise loss can use labeled negatives.
    if (loss == LossKind::kPairwiseCrossEntropy)
      spec.training_pairs.insert(spec.training_pairs.end(), negatives.begin(), negatives.end());
    spec.tuning_pairs = std::move(tune);
    if (auto it = weights.find(spec.name); it != weights.end()) spec.weight = it->second;
    specs.push_back(std::move(spec));
  }

  fs::create_directories(o.out);
  auto log = open_output(fs::path(o.out) / "train_log.csv");
  write_log_header(log);
  auto on_log = [&](const LogRecord& r) {
    write_log_record(log, r);
    log.flush();
    std::cerr << "step " << r.step << ' ' << r.task << " loss=" << format_double(r.loss)
              << " tuning_p1=" << format_double(r.tuning_p1) << '\n';
  };

  const auto init = EmbeddingTable::random(vocab.size(), o.dim, o.config.seed);
  std::optional<std::string> pretrain;
  if (!o.pretrain.empty()) pretrain = o.pretrain;
  const TrainResult result = train_multi_task(std::move(specs), init, o.config, pretrain, on_log);
  save_checkpoint(o.out, vocab, result);
  std::cout << "vocab=" << vocab.size() << " best_tuning_p1=" << format_double(result.best_tuning_p1)
            << " best_step=" << result.best_step << " steps_run=" << result.steps_run
            << " stopped_early=" << (result.stopped_early ? 1 : 0) << '\n';
  return 0;
}

// ------------------------------------------------------------------ retrieve

struct RetrieveOptions {
  std::string task, mode = "exhaustive", checkpoint, embeddings, weighting = "uniform";
  std::size_t k = 100;
  std::size_t threads = 1;
  BM25Params bm25;
  std::string out, tag, save_index;
};

// Maps text to an embedding through a token lookup; optional idf weights.
class TextEncoder {
 public:
  TextEncoder(Vocabulary vocab, EmbeddingTable table, bool idf_weighted)
      : vocab_(std::move(vocab)), table_(std::move(table)), idf_weighted_(idf_weighted) {
    if (idf_weighted_ && vocab_.num_docs() == 0)
      throw Error("idf weighting needs document frequencies");
  }

  Vector encode(const std::string& text) const {
    const auto tokens = tokenize(text);
    const auto ids = vocab_.ids(tokens);
    if (!idf_weighted_) return encode_average(table_, ids);
    std::vector<double> w;
    w.reserve(ids.size());
    for (TokenId id : ids) w.push_back(idf(vocab_, vocab_.token(id)));
    return encode_idf_weighted(table_, ids, w);
  }

 private:
  Vocabulary vocab_;
  EmbeddingTable table_;
  bool idf_weighted_;
};

// Pretrained embeddings carry no document frequencies, so idf comes from the
// candidate pool.
Vocabulary vocabulary_for_embeddings(const std::vector<Token>& tokens, const RetrievalTask& task) {
  std::map<Token, std::size_t> df;
  for (const auto& [id, text] : task.candidates) {
    auto toks = tokenize(text);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (const auto& t : toks) ++df[t];
  }
  Vocabulary v;
  for (const auto& t : tokens) {
    auto it = df.find(t);
    v.add(t, it == df.end() ? 0 : it->second);
  }
  v.set_num_docs(task.candidates.size());
  return v;
}

int cmd_retrieve(const RetrieveOptions& o) {
  require_task_dir(o.task);
  if (o.k < 1) throw Error("--k must be at least 1");
  const RetrievalTask task = load_task(o.task);
  const auto queries = sorted_queries(task);
  const std::string tag = o.tag.empty() ? o.mode : o.tag;
  std::vector<RankedList> lists(queries.size());

  if (o.mode == "identity") {
    for (std::size_t i = 0; i < queries.size(); ++i) lists[i] = identity_retrieval(task, queries[i]);
  } else if (o.mode == "bm25" || o.mode == "tfidf") {
    std::vector<std::pair<ItemId, std::vector<Token>>> docs;
    for (const auto& [id, text] : task.candidates) docs.emplace_back(id, tokenize(text));
    const auto index = build_inverted_index(docs);
    const auto scorer = o.mode == "bm25" ? DiscreteScorer::kBM25 : DiscreteScorer::kTfidf;
    parallel_for(queries.size(), o.threads, [&](std::size_t i) {
      lists[i] = discrete_top_k(index, tokenize(task.text_of(queries[i])), o.k, scorer, o.bm25);
    });
  } else if (o.mode == "exhaustive" || o.mode == "quantized") {
    if (o.weighting != "uniform" && o.weighting != "idf")
      throw Error("--weighting must be uniform or idf");
    const bool idf_weighted = o.weighting == "idf";
    std::optional<TextEncoder> encoder;
    if (!o.checkpoint.empty()) {
      require_file(fs::path(o.checkpoint) / "vocab.tsv");
      require_file(fs::path(o.checkpoint) / "embeddings.txt");
      auto ckpt = load_checkpoint(o.checkpoint);
      encoder.emplace(std::move(ckpt.vocab), std::move(ckpt.table), idf_weighted);
    } else if (!o.embeddings.empty()) {
      require_file(o.embeddings);
      auto emb = load_embeddings(o.embeddings);
      encoder.emplace(vocabulary_for_embeddings(emb.tokens, task), std::move(emb.table), idf_weighted);
    } else {
      throw Error("--mode " + o.mode + " needs --checkpoint or --embeddings");
    }

    std::vector<std::pair<ItemId, Vector>> encoded(task.candidates.size());
    parallel_for(task.candidates.size(), o.threads, [&](std::size_t i) {
      encoded[i] = {task.candidates[i].first, encoder->encode(task.candidates[i].second)};
    });
    std::vector<Vector> qvecs(queries.size());
    parallel_for(queries.size(), o.threads,
                 [&](std::size_t i) { qvecs[i] = encoder->encode(task.text_of(queries[i])); });

    const CandidateIndex index = build_index(encoded);
    if (o.mode == "exhaustive") {
      lists = search_all(qvecs, o.threads, [&](const Vector& q) { return exhaustive_top_k(index, q, o.k); });
      if (!o.save_index.empty()) {
        std::ofstream os(o.save_index, std::ios::binary);
        if (!os) throw Error("cannot write " + o.save_index);
        write_index(os, index);
      }
    } else {
      const auto qindex = QuantizedIndex::quantize(index);
      lists = search_all(qvecs, o.threads, [&](const Vector& q) { return quantized_top_k(qindex, q, o.k); });
      if (!o.save_index.empty()) {
        std::ofstream os(o.save_index, std::ios::binary);
        if (!os) throw Error("cannot write " + o.save_index);
        write_index(os, qindex);
      }
    }
  } else {
    throw Error("unknown --mode '" + o.mode + "' (expected exhaustive, quantized, bm25, tfidf or identity)");
  }

  write_runs(o.out, queries, lists, tag);
  std::cout << "queries=" << queries.size() << " run=" << o.out << '\n';
  return 0;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateOptions {
  std::string run, qrels, per_query;
  std::size_t k = 100;
  bool missing_as_zero = false;
};

int cmd_evaluate(const EvaluateOptions& o) {
  require_file(o.run);
  require_file(o.qrels);
  std::ifstream run_is(o.run);
  auto rankings = read_run(run_is);
  if (rankings.empty()) throw Error("run file " + o.run + " has no entries");
  std::ifstream qrels_is(o.qrels);
  const Qrels qrels = read_qrels(qrels_is);
  if (qrels.queries.empty()) throw Error("qrels file " + o.qrels + " has no entries");
  if (o.missing_as_zero)
    for (const auto& q : qrels.queries) rankings.try_emplace(q);
  const EvalReport report = map_at_k(rankings, qrels.relevance, qrels.queries, o.k);
  write_report(std::cout, report);
  if (!o.per_query.empty()) {
    auto os = open_output(o.per_query);
    write_per_query(os, report);
  }
  return 0;
}

// ------------------------------------------------------------ baseline-stats

struct BaselineOptions {
  std::string task;
  std::size_t k = 100;
  BM25Params bm25;
};

int cmd_baseline_stats(const BaselineOptions& o) {
  require_task_dir(o.task);
  const RetrievalTask task = load_task(o.task);
  print_task_stats(task);

  std::map<ItemId, RankedList> identity;
  for (const auto& q : task.queries) identity[q] = identity_retrieval(task, q);

  std::vector<std::pair<ItemId, std::vector<Token>>> docs;
  for (const auto& [id, text] : task.candidates) docs.emplace_back(id, tokenize(text));
  const auto index = build_inverted_index(docs);
  std::map<ItemId, RankedList> tfidf, bm25;
  for (const auto& q : task.queries) {
    const auto tokens = tokenize(task.text_of(q));
    tfidf[q] = discrete_top_k(index, tokens, o.k, DiscreteScorer::kTfidf);
    bm25[q] = discrete_top_k(index, tokens, o.k, DiscreteScorer::kBM25, o.bm25);
  }
  const std::string at = "MAP@" + std::to_string(o.k);
  std::cout << "identity\t" << at << '\t' << format_percent(map_at_k(identity, task, o.k).map_at_k) << '\n';
  std::cout << "tfidf\t" << at << '\t' << format_percent(map_at_k(tfidf, task, o.k).map_at_k) << '\n';
  std::cout << "bm25\t" << at << '\t' << format_percent(map_at_k(bm25, task, o.k).map_at_k) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-encoder training, retrieval and evaluation"};
  app.require_subcommand(1);

  BuildTaskOptions bt;
  auto* build = app.add_subcommand("build-task", "Construct a retrieval task from labeled pairs");
  build->add_option("--input", bt.input, "Pairs file")->required();
  build->add_option("--format", bt.format, "quora-tsv, askubuntu or paralex")->capture_default_str();
  build->add_option("--titles", bt.titles, "Question titles file (askubuntu)");
  build->add_option("--out", bt.out, "Output task directory")->required();

  TrainOptions tr;
  auto* train = app.add_subcommand("train", "Train a dual encoder");
  train->add_option("--input", tr.input, "Pairs file for a single task");
  train->add_option("--format", tr.format, "Format of --input")->capture_default_str();
  train->add_option("--titles", tr.titles, "Titles file for --input (askubuntu)");
  train->add_option("--task", tr.tasks, "Extra task as name:format:path[:titles]; repeatable");
  train->add_option("--task-weight", tr.task_weights, "Loss weight as name=w; repeatable");
  train->add_option("--pretrain", tr.pretrain, "Train this task alone first");
  train->add_option("--loss", tr.loss, "softmax, in-batch-ce, triplet or pairwise-ce")->capture_default_str();
  train->add_option("--delta", tr.delta, "Triplet margin")->capture_default_str();
  train->add_option("--dim", tr.dim, "Embedding dimension")->capture_default_str();
  train->add_option("--min-count", tr.min_count, "Vocabulary frequency cutoff")->capture_default_str();
  train->add_option("--tune-fraction", tr.tune_fraction, "Positives held out for tuning")->capture_default_str();
  train->add_option("--batch-size", tr.config.batch_size)->capture_default_str();
  train->add_option("--lr", tr.config.learning_rate)->capture_default_str();
  train->add_option("--momentum", tr.config.momentum)->capture_default_str();
  train->add_option("--max-steps", tr.config.max_steps)->capture_default_str();
  train->add_option("--eval-every", tr.config.eval_every)->capture_default_str();
  train->add_option("--patience", tr.config.patience)->capture_default_str();
  train->add_option("--seed", tr.config.seed)->capture_default_str();
  train->add_option("--out", tr.out, "Checkpoint directory")->required();

  RetrieveOptions rt;
  rt.threads = std::max(1u, std::thread::hardware_concurrency());
  auto* retrieve = app.add_subcommand("retrieve", "Rank candidates for every task query");
  retrieve->add_option("--task", rt.task, "Task directory")->required();
  retrieve->add_option("--mode", rt.mode, "exhaustive, quantized, bm25, tfidf or identity")->capture_default_str();
  retrieve->add_option("--checkpoint", rt.checkpoint, "Checkpoint directory");
  retrieve->add_option("--embeddings", rt.embeddings, "Pretrained text embeddings");
  retrieve->add_option("--weighting", rt.weighting, "uniform or idf")->capture_default_str();
  retrieve->add_option("--k", rt.k)->capture_default_str();
  retrieve->add_option("--threads", rt.threads)->capture_default_str();
  retrieve->add_option("--k1", rt.bm25.k1)->capture_default_str();
  retrieve->add_option("--b", rt.bm25.b)->capture_default_str();
  retrieve->add_option("--tag", rt.tag, "Run tag (defaults to the mode)");
  retrieve->add_option("--save-index", rt.save_index, "Write the binary index here");
  retrieve->add_option("--out", rt.out, "Run file")->required();

  EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "MAP@K of a run against qrels");
  evaluate->add_option("--run", ev.run)->required();
  evaluate->add_option("--qrels", ev.qrels)->required();
  evaluate->add_option("--k", ev.k)->capture_default_str();
  evaluate->add_option("--per-query", ev.per_query, "Write per-query AP here");
  evaluate->add_flag("--missing-as-zero", ev.missing_as_zero, "Score unranked queries as 0");

  BaselineOptions bs;
  auto* baseline = app.add_subcommand("baseline-stats", "Task statistics and discrete baselines");
  baseline->add_option("--task", bs.task, "Task directory")->required();
  baseline->add_option("--k", bs.k)->capture_default_str();
  baseline->add_option("--k1", bs.bm25.k1)->capture_default_str();
  baseline->add_option("--b", bs.bm25.b)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*build) return cmd_build_task(bt);
    if (*train) return cmd_train(tr);
    if (*retrieve) return cmd_retrieve(rt);
    if (*evaluate) return cmd_evaluate(ev);
    if (*baseline) return cmd_baseline_stats(bs);
  } catch (const MissingFile& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
