use std::path::Path;

use respcast::datamodel::{load_dataset, Dataset, DatasetPaths, Split, LURKER_THRESHOLD};
use respcast::embed::{
    build_table, read_embeddings, write_embeddings, EmbeddingProvider, FileProvider, HashProvider, RandomProvider,
};
use respcast::graph::{
    build_graph as build_hetero_graph, distant_shared_belief_ratio, graph_stats, read_graph, write_graph, GraphOptions,
    GraphStats,
};
use respcast::hgt::{compile, features_from_table, read_checkpoint, write_checkpoint};
use respcast::llm::{LlmClient, MockClient, OpenAiClient, ReplayClient};
use respcast::metrics::{evaluate_with, Breakdowns};
use respcast::persona::{extract_all, read_personas, write_personas, LatentPersona, PersonaCache};
use respcast::synth::{generate_world, world_statistics, write_world};
use respcast::train::{beliefs_by_user, history_csv, predict};
use respcast::zeroshot::{run_zero_shot_eval, write_predictions};
use respcast::{Error, Model32};
use serde::Serialize;

use crate::config::{require, ProviderKind, RunConfig};
use crate::{CliError, EvalArgs, PersonasArgs, ZeroshotArgs};

fn core(e: impl Into<Error>) -> CliError {
    CliError::Core(e.into())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let io = |source| {
        core(Error::Io {
            path: path.display().to_string(),
            source,
        })
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

fn emit(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("summary serializes"));
}

fn dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    let paths = DatasetPaths::in_dir(&config.paths.data_dir);
    require(&[&paths.users, &paths.news, &paths.responses, &paths.follows])?;
    load_dataset(&paths).map_err(core)
}

fn client(config: &RunConfig, mock: bool) -> Result<Box<dyn LlmClient>, CliError> {
    if mock {
        return Ok(Box::new(MockClient::new(config.master_seed())));
    }
    let remote = OpenAiClient::from_env(config.client.clone()).map_err(core)?;
    Ok(Box::new(ReplayClient::open(Some(remote), &config.paths.llm_cache).map_err(core)?))
}

fn persona_cache(config: &RunConfig, mock: bool) -> Result<PersonaCache, CliError> {
    if mock {
        Ok(PersonaCache::in_memory())
    } else {
        PersonaCache::open(&config.paths.persona_cache).map_err(core)
    }
}

pub fn synth(config: &RunConfig) -> Result<(), CliError> {
    let world = generate_world(&config.synth).map_err(core)?;
    write_world(&world, &config.paths.data_dir).map_err(core)?;
    emit(&world_statistics(&world.dataset, &world.gold_personas).map_err(core)?);
    Ok(())
}

pub fn personas(config: &RunConfig, args: &PersonasArgs) -> Result<(), CliError> {
    let data = dataset(config)?;
    let client = client(config, args.mock)?;
    let cache = persona_cache(config, args.mock)?;
    let personas =
        extract_all(client.as_ref(), data.users(), Some(&cache), &config.persona, args.threads).map_err(core)?;
    cache.save().map_err(core)?;
    write_personas(&personas, &config.paths.personas).map_err(core)?;
    emit(&serde_json::json!({
        "personas": personas.len(),
        "cache_hits": cache.hits(),
        "cache_misses": cache.misses(),
    }));
    Ok(())
}

pub fn build_graph(config: &RunConfig) -> Result<(), CliError> {
    let data = dataset(config)?;
    require(&[&config.paths.personas])?;
    let personas = read_personas(&config.paths.personas).map_err(core)?;
    let options = GraphOptions {
        ablation: config.ablation,
        influencers: config.graph.influencers,
    };
    let graph = build_hetero_graph(&data, &personas, &options).map_err(core)?;
    write_graph(&graph, &config.paths.graph).map_err(core)?;
    emit(&graph_stats(&graph));
    Ok(())
}

pub fn embed(config: &RunConfig) -> Result<(), CliError> {
    let data = dataset(config)?;
    require(&[&config.paths.graph])?;
    let graph = read_graph(&config.paths.graph).map_err(core)?;
    let dim = config.hgt.dim;
    let provider: Box<dyn EmbeddingProvider> = match config.embed.provider {
        ProviderKind::Hash => Box::new(HashProvider { dim }),
        ProviderKind::Random => Box::new(RandomProvider {
            dim,
            seed: config.master_seed(),
        }),
        ProviderKind::File => {
            let path = config.embed.import.as_deref().expect("validated");
            require(&[path])?;
            let p = FileProvider::open(path).map_err(core)?;
            if p.dim() != dim {
                return Err(CliError::Config(format!(
                    "imported embeddings have dim {}, hgt.dim is {dim}",
                    p.dim()
                )));
            }
            Box::new(p)
        }
    };
    let table = build_table(&graph, &data, provider.as_ref(), &config.ablation, config.master_seed()).map_err(core)?;
    write_embeddings(&table, &config.paths.embeddings).map_err(core)?;
    emit(&serde_json::json!({"nodes": table.len(), "dim": table.dim()}));
    Ok(())
}

struct Loaded {
    data: Dataset,
    graph: respcast::graph::HeteroGraph,
    index: respcast::hgt::GraphIndex,
    features: Vec<f32>,
}

fn load_model_inputs(config: &RunConfig) -> Result<Loaded, CliError> {
    let data = dataset(config)?;
    require(&[&config.paths.graph, &config.paths.embeddings])?;
    let graph = read_graph(&config.paths.graph).map_err(core)?;
    let table = read_embeddings(&config.paths.embeddings).map_err(core)?;
    let index = compile(&graph);
    let features = features_from_table(&index, &table).map_err(core)?;
    Ok(Loaded {
        data,
        graph,
        index,
        features,
    })
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    let inputs = load_model_inputs(config)?;
    let outcome = respcast::train::train(&inputs.index, &inputs.features, &inputs.data, &config.hgt, &config.train)
        .map_err(core)?;
    write_checkpoint(&config.paths.checkpoint, &outcome.model).map_err(core)?;
    write_text(&config.paths.history, &history_csv(&outcome.history))?;
    emit(&serde_json::json!({
        "epochs": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "best_score": outcome.best_score,
        "final_train_mif1": outcome.final_train_mif1,
    }));
    Ok(())
}

pub fn eval(config: &RunConfig, args: &EvalArgs) -> Result<(), CliError> {
    let inputs = load_model_inputs(config)?;
    require(&[&config.paths.checkpoint])?;
    let model: Model32 = read_checkpoint(&config.paths.checkpoint).map_err(core)?;
    let split = if args.dev { Split::Dev } else { Split::Test };
    let gold = inputs.data.split(split);
    let preds = predict(&model, &inputs.index, &inputs.features, &gold).map_err(core)?;
    let beliefs = beliefs_by_user(&inputs.graph);
    let breakdowns = Breakdowns {
        lurkers: args.lurkers.then_some(LURKER_THRESHOLD),
        unseen: args.unseen,
        beliefs: args.by_belief.then_some(&beliefs),
    };
    let report = evaluate_with(&preds, &gold, &inputs.data, &breakdowns).map_err(core)?;
    let json = report.to_json();
    write_text(&config.paths.report, &json)?;
    print!("{json}");
    Ok(())
}

pub fn zeroshot(config: &RunConfig, args: &ZeroshotArgs) -> Result<(), CliError> {
    let data = dataset(config)?;
    require(&[&config.paths.graph])?;
    let graph = read_graph(&config.paths.graph).map_err(core)?;
    let personas: Vec<LatentPersona> = if config.paths.personas.exists() {
        read_personas(&config.paths.personas).map_err(core)?
    } else {
        Vec::new()
    };
    let mut options = config.zeroshot;
    if let Some(k) = args.k {
        if k == 0 {
            return Err(CliError::Config("--k must be positive".into()));
        }
        options.k = k;
    }
    let client = client(config, args.mock)?;
    let cache = persona_cache(config, args.mock)?;
    let run = run_zero_shot_eval(
        &graph,
        &data,
        client.as_ref(),
        args.mode,
        &options,
        &personas,
        &cache,
        &config.persona,
    )
    .map_err(core)?;
    cache.save().map_err(core)?;
    write_predictions(&run.records, &config.paths.predictions).map_err(core)?;
    let json = run.report.to_json();
    write_text(&config.paths.report, &json)?;
    print!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct StatsOutput {
    #[serde(flatten)]
    graph: GraphStats,
    distant_shared_belief_ratio: f64,
}

pub fn stats(config: &RunConfig) -> Result<(), CliError> {
    require(&[&config.paths.graph])?;
    let graph = read_graph(&config.paths.graph).map_err(core)?;
    emit(&StatsOutput {
        graph: graph_stats(&graph),
        distant_shared_belief_ratio: distant_shared_belief_ratio(&graph),
    });
    Ok(())
}
