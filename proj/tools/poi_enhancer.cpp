#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include "poi/attributes.hpp"
#include "poi/baselines.hpp"
#include "poi/config.hpp"
#include "poi/corpus.hpp"
#include "poi/downstream.hpp"
#include "poi/embedding_io.hpp"
#include "poi/enhancer.hpp"
#include "poi/extractor.hpp"
#include "poi/geocoder.hpp"
#include "poi/prompts.hpp"
#include "poi/sampling.hpp"
#include "poi/synthetic.hpp"
#include "poi/training.hpp"
#include "poi/util.hpp"

namespace fs = std::filesystem;
using namespace poi;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string log_level = "info";
};

RunConfig resolve(const Globals& g) {
  RunConfig c = g.config.empty() ? config_from_json(nlohmann::json::object()) : load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.output_dir = g.out;
  c.propagate_seed();
  return c;
}

fs::path prepare_out(const RunConfig& c) {
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  echo_config(c, dir);
  nlohmann::json info{{"tool_version", kToolVersion},
                      {"seed", c.seed},
                      {"template_version", std::string(kTemplateVersion)},
                      {"backend_id", c.backend.backend_id()},
                      {"checkpoint_format", "POICKPT1"}};
  atomic_write(dir / "run_info.json", info.dump(2) + "\n");
  return dir;
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

Dataset load_canonical(const fs::path& path) {
  if (!fs::exists(path)) throw UserError(path.string() + ": not found (run derive-attributes first or pass --dataset)");
  return load_checkins(path, Adapter::CanonicalTsv);
}

void write_report(const MetricReport& r, const fs::path& dir) {
  const std::string text = r.to_json().dump(2);
  atomic_write(dir / ("metrics_" + r.task + ".json"), text + "\n");
  std::cout << text << "\n";
}

EmbeddingSet load_eval_embeddings(const fs::path& path, const Dataset& ds) {
  EmbeddingSet raw = load_embeddings(path);
  std::vector<PoiId> ids;
  for (const auto& [id, _] : ds.pois) ids.push_back(id);
  AlignReport rep;
  EmbeddingSet e = align_embeddings(raw, ids, raw.dim(), true, &rep);
  if (!rep.missing.empty()) spdlog::warn("{} dataset POIs have no embedding and are left out", rep.missing.size());
  e.provenance = path.filename().string();
  return e;
}

// Features and base rows of the POIs present in both, ascending id.
TrainingInputs join_inputs(const FeatureTable& ft, const EmbeddingSet& base) {
  std::map<PoiId, Eigen::Index> base_row;
  for (std::size_t i = 0; i < base.poi_ids.size(); ++i) base_row[base.poi_ids[i]] = static_cast<Eigen::Index>(i);
  std::vector<Eigen::Index> frows, brows;
  TrainingInputs in;
  for (std::size_t i = 0; i < ft.poi_ids.size(); ++i) {
    auto it = base_row.find(ft.poi_ids[i]);
    if (it == base_row.end()) continue;
    in.poi_ids.push_back(ft.poi_ids[i]);
    frows.push_back(static_cast<Eigen::Index>(i));
    brows.push_back(it->second);
  }
  if (in.poi_ids.empty()) throw UserError("no POI has both LLM features and a base embedding");
  const auto n = static_cast<Eigen::Index>(in.poi_ids.size());
  auto take = [&](const MatrixF& src, const std::vector<Eigen::Index>& rows) {
    MatrixF out(n, src.cols());
    for (Eigen::Index r = 0; r < n; ++r) out.row(r) = src.row(rows[static_cast<std::size_t>(r)]);
    return out;
  };
  in.visit = take(ft.visit, frows);
  in.address = take(ft.address, frows);
  in.surrounding = take(ft.surrounding, frows);
  in.base = take(base.matrix, brows);
  const auto dropped = ft.poi_ids.size() - in.poi_ids.size();
  if (dropped > 0) spdlog::warn("{} POIs with features but no base embedding are skipped", dropped);
  return in;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LLM-feature enhancement of POI embeddings"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "flat-keyed JSON config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "global seed, overrides the config");
  app.add_option("--out", g.out, "output directory, overrides the config");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error");

  // make-synthetic
  SyntheticConfig syn;
  auto* c_syn = app.add_subcommand("make-synthetic", "write a synthetic check-in corpus");
  c_syn->add_option("--pois", syn.num_pois);
  c_syn->add_option("--categories", syn.num_categories);
  c_syn->add_option("--users", syn.num_users);
  c_syn->add_option("--checkins-per-user", syn.checkins_per_user);

  // derive-attributes
  std::string checkins_path, geocode_fixture;
  auto* c_attr = app.add_subcommand("derive-attributes", "load, filter and derive POI attributes");
  c_attr->add_option("--checkins", checkins_path, "overrides data.checkins");
  c_attr->add_option("--geocode-fixture", geocode_fixture, "directory of canned reverse-geocode replies")
      ->check(CLI::ExistingDirectory);

  // gen-prompts
  std::string dataset_path, attributes_path;
  std::vector<std::string> kinds;
  auto* c_prompts = app.add_subcommand("gen-prompts", "render the three prompts per POI");
  c_prompts->add_option("--dataset", dataset_path);
  c_prompts->add_option("--attributes", attributes_path);
  c_prompts->add_option("--kinds", kinds, "subset of visit,address,surrounding")->delimiter(',');

  // extract-features
  std::string prompts_path, features_dir;
  auto* c_feat = app.add_subcommand("extract-features", "encode prompts with the frozen backend");
  c_feat->add_option("--prompts", prompts_path);
  c_feat->add_option("--features", features_dir, "feature cache directory");
  c_feat->add_option("--dataset", dataset_path);

  // train-base
  auto* c_base = app.add_subcommand("train-base", "skip-gram reference base embeddings");
  c_base->add_option("--dataset", dataset_path);

  // train-enhancer
  std::string base_path;
  bool allow_missing = false;
  bool dump_batches = false;
  auto* c_train = app.add_subcommand("train-enhancer", "contrastive training of the fusion model");
  c_train->add_option("--dataset", dataset_path);
  c_train->add_option("--attributes", attributes_path);
  c_train->add_option("--base-embeddings", base_path);
  c_train->add_option("--features", features_dir);
  c_train->add_flag("--allow-missing", allow_missing, "skip POIs without a base embedding");
  c_train->add_flag("--dump-batches", dump_batches, "write batches.jsonl");

  // enhance
  std::string checkpoint_path;
  auto* c_enh = app.add_subcommand("enhance", "write fused embeddings");
  c_enh->add_option("--checkpoint", checkpoint_path);
  c_enh->add_option("--base-embeddings", base_path);
  c_enh->add_option("--features", features_dir);

  // eval-*
  std::string emb_path;
  auto add_eval = [&](const char* name, const char* what) {
    auto* s = app.add_subcommand(name, what);
    s->add_option("--embeddings", emb_path)->required();
    s->add_option("--dataset", dataset_path);
    return s;
  };
  auto* c_rec = add_eval("eval-poirec", "next-POI recommendation Hit@1/Hit@5");
  auto* c_cls = add_eval("eval-classify", "trajectory user classification");
  auto* c_flow = add_eval("eval-flow", "POI flow forecasting");
  auto* c_clu = add_eval("eval-cluster", "k-means NMI against categories");

  PoiId pa = 0, pb = 0;
  std::string emb_after;
  auto* c_cmp = app.add_subcommand("compare", "Euclidean distance between two POIs");
  c_cmp->add_option("--embeddings", emb_path)->required();
  c_cmp->add_option("--after", emb_after, "second embedding file, e.g. fused");
  c_cmp->add_option("--a", pa)->required();
  c_cmp->add_option("--b", pb)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  // stdout carries metrics JSON only.
  spdlog::set_default_logger(spdlog::stderr_color_mt("poi"));
  try {
    spdlog::set_level(spdlog::level::from_str(g.log_level));
    RunConfig cfg = resolve(g);
    const fs::path out = prepare_out(cfg);
    const fs::path ds_default = out / "dataset.tsv";
    const fs::path attrs_default = out / "attributes.jsonl";
    const fs::path feat_default = out / "features";
    const fs::path base_default = out / "base_embeddings.txt";

    if (*c_syn) {
      syn.seed = cfg.seed;
      const Dataset ds = make_synthetic_dataset(syn);
      save_checkins(ds, out / "checkins.tsv");
      spdlog::info("wrote {} POIs, {} check-ins to {}", ds.pois.size(), ds.checkin_count(), (out / "checkins.tsv").string());
    } else if (*c_attr) {
      const std::string src = checkins_path.empty() ? cfg.data.checkins : checkins_path;
      if (src.empty()) throw UserError("no check-in file: set data.checkins or pass --checkins");
      LoadReport rep;
      const Dataset raw = load_checkins(src, cfg.data.adapter, cfg.data.timezone_offset_minutes, &rep);
      const Dataset ds = filter_dataset(raw, cfg.data.min_poi_checkins, cfg.data.min_seq_len);
      spdlog::info("loaded {} lines ({} malformed); after filtering {} POIs, {} users, {} check-ins", rep.lines,
                   rep.malformed, ds.pois.size(), ds.sequences.size(), ds.checkin_count());
      if (ds.pois.empty()) throw UserError("filtering removed every POI");
      save_checkins(ds, ds_default);
      std::unique_ptr<ReverseGeocoder> geocoder;
      if (!geocode_fixture.empty() || cfg.geocoder.enabled) {
        std::unique_ptr<GeocodeTransport> t;
        if (!geocode_fixture.empty()) {
          t = std::make_unique<FixtureTransport>(geocode_fixture);
        } else {
          t = std::make_unique<NominatimTransport>(cfg.geocoder.endpoint, cfg.geocoder.email,
                                                   std::chrono::seconds{cfg.geocoder.timeout_seconds});
        }
        GeocoderConfig gc;
        gc.cache_dir = out / "geocode_cache";
        gc.rate_limit_per_sec = cfg.geocoder.rate_limit_per_sec;
        gc.max_retries = cfg.geocoder.max_retries;
        geocoder = std::make_unique<ReverseGeocoder>(std::move(t), gc);
      }
      const auto attrs = derive_attributes(ds, cfg.attributes_side_km, geocoder.get());
      save_attributes(attrs, attrs_default);
      spdlog::info("wrote attributes for {} POIs", attrs.size());
    } else if (*c_prompts) {
      const Dataset ds = load_canonical(or_default(dataset_path, ds_default));
      const auto attrs = load_attributes(or_default(attributes_path, attrs_default));
      std::vector<PromptKind> selected;
      if (kinds.empty()) {
        selected.assign(kAllPromptKinds.begin(), kAllPromptKinds.end());
      } else {
        for (const auto& k : kinds) selected.push_back(parse_prompt_kind(k));
      }
      std::vector<Prompt> prompts;
      for (const auto& a : attrs) {
        auto it = ds.pois.find(a.poi_id);
        if (it == ds.pois.end()) throw UserError("attributes mention POI " + std::to_string(a.poi_id) + " absent from the dataset");
        for (auto k : selected) prompts.push_back(generate_prompt(it->second, a, k));
      }
      save_prompts(prompts, out / "prompts.jsonl");
      spdlog::info("wrote {} prompts", prompts.size());
    } else if (*c_feat) {
      const auto prompts = load_prompts(or_default(prompts_path, out / "prompts.jsonl"));
      std::vector<std::string> categories;
      if (cfg.backend.kind == BackendKind::StructuredMock) {
        categories = load_canonical(or_default(dataset_path, ds_default)).category_vocab;
      }
      auto backend = make_backend(cfg.backend, categories);
      const fs::path dir = or_default(features_dir, feat_default);
      const auto ex = extract_corpus(prompts, *backend, dir, static_cast<std::size_t>(cfg.backend_max_in_flight));
      save_feature_manifest(ex, dir);
      spdlog::info("features for {} POIs ({} backend calls, {} cache hits, {} incomplete)", ex.bundles.size(),
                   ex.backend_calls, ex.cache_hits, ex.missing.size());
    } else if (*c_base) {
      const Dataset ds = load_canonical(or_default(dataset_path, ds_default));
      const auto splits = split_sequences(ds, cfg.data.split, cfg.seed);
      SkipGramConfig sg = cfg.skipgram;
      sg.d = cfg.enhancer.d;
      const auto res = train_skipgram_reference(splits.train, sg);
      save_embeddings(base_default, res.embeddings);
      spdlog::info("skip-gram: {} POIs, {} unseen in training, final loss {:.4f}", res.embeddings.size(),
                   res.unseen.size(), res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back());
    } else if (*c_train) {
      const Dataset ds = load_canonical(or_default(dataset_path, ds_default));
      const auto attrs = load_attributes(or_default(attributes_path, attrs_default));
      const FeatureTable ft = load_feature_table(or_default(features_dir, feat_default));
      if (static_cast<int>(ft.dim()) != cfg.enhancer.D) {
        throw UserError("feature dimension " + std::to_string(ft.dim()) + " does not match enhancer.D " +
                        std::to_string(cfg.enhancer.D));
      }
      AlignReport rep;
      const EmbeddingSet base =
          load_base_embeddings(or_default(base_path, base_default), ds, cfg.enhancer.d, allow_missing, &rep);
      const TrainingInputs in = join_inputs(ft, base);
      const auto splits = split_sequences(ds, cfg.data.split, cfg.seed);
      const std::set<PoiId> allowed(in.poi_ids.begin(), in.poi_ids.end());
      const BatchPlan plan = build_batches(ds, splits.train, attrs, cfg.sampler, allowed);
      spdlog::info("{} batches (m={}), {} anchors without positives, {} drawn with replacement", plan.batches.size(),
                   cfg.sampler.m, plan.anchors_without_positives, plan.batches_with_replacement);
      if (plan.batches.empty()) throw UserError("the sampler produced no training batch");
      if (dump_batches) atomic_write(out / "batches.jsonl", batches_to_jsonl(plan.batches));
      auto model = EnhancerModel<float>::init(cfg.enhancer, cfg.seed);
      TrainOptions opts;
      opts.out_dir = out;
      opts.checkpoint_meta = {{"seed", cfg.seed},
                              {"backend_id", ft.backend_id},
                              {"template_version", std::string(kTemplateVersion)},
                              {"chunk_size", cfg.chunk_size}};
      opts.on_epoch = [](const LossReport& r) {
        spdlog::info("epoch {}: L_cont {:.5f} L_sim {:.5f} total {:.5f}", r.epoch, r.l_cont, r.l_sim, r.total);
      };
      const auto res = train_enhancer(model, in, plan.batches, cfg.train, opts);
      spdlog::info("best epoch {} (total {:.5f})", res.best_epoch, res.best_total);
    } else if (*c_enh) {
      const fs::path ckpt = or_default(checkpoint_path, out / "checkpoint_best.bin");
      if (!fs::exists(ckpt)) throw UserError(ckpt.string() + ": checkpoint not found");
      const Checkpoint cp = load_checkpoint(ckpt);
      const FeatureTable ft = load_feature_table(or_default(features_dir, feat_default));
      if (cp.meta.contains("backend_id") && cp.meta["backend_id"] != ft.backend_id) {
        throw UserError("checkpoint was trained on backend " + cp.meta["backend_id"].dump() + ", features come from " +
                        ft.backend_id);
      }
      const EmbeddingSet base = load_embeddings(or_default(base_path, base_default));
      if (base.dim() != cp.model.hp.d) throw UserError("base embedding dimension does not match the checkpoint");
      const TrainingInputs in = join_inputs(ft, base);
      const auto r = enhance(cp.model, in.visit, in.address, in.surrounding, in.base, cfg.chunk_size);
      save_embeddings(out / "fused_embeddings.txt", {in.poi_ids, r.fused, EmbeddingRole::Fused, ckpt.string()});
      save_embeddings(out / "semantic_embeddings.txt", {in.poi_ids, r.semantic, EmbeddingRole::Semantic, ckpt.string()});
      spdlog::info("wrote fused embeddings for {} POIs", in.poi_ids.size());
    } else if (*c_rec || *c_cls || *c_flow || *c_clu) {
      const Dataset ds = load_canonical(or_default(dataset_path, ds_default));
      const EmbeddingSet emb = load_eval_embeddings(emb_path, ds);
      if (*c_rec) {
        write_report(eval_recommendation(emb, split_sequences(ds, cfg.data.split, cfg.seed), cfg.task), out);
      } else if (*c_cls) {
        write_report(eval_classification(emb, split_within_sequences(ds, cfg.data.split), cfg.task), out);
      } else if (*c_flow) {
        const FlowBuild fb = build_flow_series(ds, cfg.task);
        if (fb.dropped_constant > 0) spdlog::info("{} constant flow series dropped", fb.dropped_constant);
        write_report(eval_flow(emb, fb.series, cfg.task), out);
      } else {
        write_report(eval_cluster(emb, ds, cfg.task), out);
      }
    } else if (*c_cmp) {
      const EmbeddingSet e = load_embeddings(emb_path);
      nlohmann::json j{{"a", pa}, {"b", pb}, {"distance", pairwise_distance(e, pa, pb)}};
      if (!emb_after.empty()) {
        j["distance_after"] = pairwise_distance(load_embeddings(emb_after), pa, pb);
      }
      std::cout << j.dump() << "\n";
    }
    return 0;
  } catch (const UserError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::critical("internal error: {}", e.what());
    return 2;
  }
}
