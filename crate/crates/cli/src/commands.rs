use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ndarray::{Array2, Array3, Axis};
use serde::Serialize;
use tilewise_core::config::AppConfig;
use tilewise_core::cost::{compare_strategies, CostReport, Strategy};
use tilewise_core::encoding::{fit_patch_grid, interpolate_pos_embed, overview_grid, PatchGrid, PosEmbedGrid};
use tilewise_core::partition::select_partition;
use tilewise_core::probes::{
    four_object_template, heatmap_probe, padding_waste, phase_classify, render_scene, Color, SceneObject, Shape,
    SyntheticScene,
};
use tilewise_core::proofs::{run_all, ProofOptions};
use tilewise_core::resampler::{compress_slices, grad_check, AttentionParams, QuerySet, TokenMatrix};
use tilewise_core::schema::{render as render_layout, serialize_layout, summarize, token_count};
use tilewise_core::{binfmt, Error, ImageSize, PartitionPlan, Rect};

use crate::output::{render, write_bytes, write_text};
use crate::{Cli, Command, CostCommand, GlobalOpts, ProbeCommand, VerifyCommand};

/// Whether a command's checks passed.
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Self::Pass
        } else {
            Self::Fail
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            Self::Pass => ExitCode::SUCCESS,
            Self::Fail => ExitCode::from(1),
        }
    }
}

struct Ctx {
    config: AppConfig,
    global: GlobalOpts,
}

impl Ctx {
    fn emit<T: Serialize>(&self, report: &T) -> Result<()> {
        let text = render(report, self.config.format)?;
        write_text(&text, self.global.out.as_deref())
    }

    /// Binary artifacts go to `--out`; the JSON summary then goes to stdout.
    fn emit_with_artifact<T: Serialize>(&self, report: &T, artifact: impl FnOnce() -> Result<Vec<u8>>) -> Result<()> {
        if let Some(path) = &self.global.out {
            write_bytes(&artifact()?, path)?;
        }
        write_text(&render(report, self.config.format)?, None)
    }

    fn planned(&self, image: ImageSize) -> Result<PartitionPlan> {
        let plan = select_partition(image, self.config.vit);
        if plan.ideal_n > self.config.max_slices {
            return Err(Error::TooManySlices {
                ideal: plan.ideal_n,
                max: self.config.max_slices,
            }
            .into());
        }
        Ok(plan)
    }
}

fn load_config(global: &GlobalOpts) -> Result<AppConfig> {
    let mut config = match &global.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seeds.resampler = seed;
        config.seeds.proofs = seed;
    }
    if let Some(format) = global.format {
        config.format = format;
    }
    if let Some(max) = global.max_slices {
        config.max_slices = max;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let config = load_config(&cli.global)?;
    let ctx = Ctx {
        config,
        global: cli.global,
    };
    match cli.command {
        Command::Plan { image } => plan(&ctx, image),
        Command::Schema { image, queries } => schema(&ctx, image, queries),
        Command::Compress(args) => compress(&ctx, args.image, args.dim, args.input.as_deref()),
        Command::GradCheck(args) => grad(&ctx, args),
        Command::Cost(cmd) => cost(&ctx, cmd),
        Command::Probe(cmd) => probe(&ctx, cmd),
        Command::Verify(VerifyCommand::Proofs {
            samples,
            n_max,
            sweep_density,
            quadrature_cells,
        }) => {
            let opts = ProofOptions {
                n_max,
                sweep_density,
                samples: samples.unwrap_or(ProofOptions::default().samples),
                seed: ctx.config.seeds.proofs,
                quadrature_cells,
            };
            let report = run_all(opts, ctx.config.vit)?;
            ctx.emit(&report)?;
            Ok(Outcome::from_pass(report.all_pass))
        }
        Command::InterpPe(args) => interp(&ctx, args),
    }
}

#[derive(Serialize)]
struct EncodedBlock {
    block: String,
    rect: Rect,
    patch_grid: PatchGrid,
    encoder_tokens: u32,
}

#[derive(Serialize)]
struct PlanReport {
    plan: PartitionPlan,
    overview: PatchGrid,
    slices: Vec<EncodedBlock>,
    encoder_tokens: u32,
    resampler_queries: usize,
    llm_tokens: usize,
}

fn blocks(plan: &PartitionPlan) -> Result<(PatchGrid, Vec<EncodedBlock>)> {
    let overview = overview_grid(plan.image, plan.vit)?;
    let cols = plan.grid.cols as usize;
    let slices = plan
        .slice_rects
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let grid = fit_patch_grid(r.w, r.h, plan.vit)?;
            Ok(EncodedBlock {
                block: format!("slice[{},{}]", i / cols, i % cols),
                rect: *r,
                patch_grid: grid,
                encoder_tokens: grid.tokens(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((overview, slices))
}

fn plan(ctx: &Ctx, image: ImageSize) -> Result<Outcome> {
    let plan = ctx.planned(image)?;
    let (overview, slices) = blocks(&plan)?;
    let k = ctx.config.resampler_queries;
    let report = PlanReport {
        encoder_tokens: overview.tokens() + slices.iter().map(|s| s.encoder_tokens).sum::<u32>(),
        llm_tokens: token_count(&plan, k),
        resampler_queries: k,
        overview,
        slices,
        plan,
    };
    ctx.emit(&report)?;
    Ok(Outcome::Pass)
}

fn schema(ctx: &Ctx, image: ImageSize, queries: Option<usize>) -> Result<Outcome> {
    let plan = ctx.planned(image)?;
    let k = queries.unwrap_or(ctx.config.resampler_queries);
    if k == 0 {
        bail!("--queries must be at least 1");
    }
    let seq = serialize_layout(&plan, k);
    #[derive(Serialize)]
    struct SchemaReport {
        grid: tilewise_core::SliceGrid,
        queries: usize,
        summary: tilewise_core::schema::LayoutSummary,
        layout: String,
    }
    let report = SchemaReport {
        grid: plan.grid,
        queries: k,
        summary: summarize(&seq),
        layout: render_layout(&seq),
    };
    match ctx.config.format {
        tilewise_core::config::OutputFormat::Text => write_text(&(report.layout + "\n"), ctx.global.out.as_deref())?,
        _ => ctx.emit(&report)?,
    }
    Ok(Outcome::Pass)
}

fn compress(ctx: &Ctx, image: ImageSize, dim: usize, input: Option<&Path>) -> Result<Outcome> {
    let plan = ctx.planned(image)?;
    let (overview, slices) = blocks(&plan)?;
    let seed = ctx.config.seeds.resampler;
    let supplied = match input {
        Some(path) => {
            let table = binfmt::decode(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)?;
            let (count, one, d) = table.dim();
            if one != 1 {
                bail!("token file must be count x 1 x dim, got {count}x{one}x{d}");
            }
            Some(TokenMatrix::new(table.index_axis(Axis(1), 0).to_owned())?)
        }
        None => None,
    };
    let dim = supplied.as_ref().map_or(dim, TokenMatrix::dim);
    let mut names = vec!["overview".to_string()];
    let mut counts = vec![overview.tokens() as usize];
    names.extend(slices.iter().map(|s| s.block.clone()));
    counts.extend(slices.iter().map(|s| s.encoder_tokens as usize));
    let inputs: Vec<TokenMatrix> = match &supplied {
        Some(tokens) => vec![tokens.clone(); counts.len()],
        None => counts
            .iter()
            .enumerate()
            .map(|(i, &c)| TokenMatrix::seeded(c, dim, seed.wrapping_add(100 + i as u64)))
            .collect(),
    };
    let queries = QuerySet::seeded(ctx.config.resampler_queries, dim, seed);
    let params = AttentionParams::seeded(dim, seed.wrapping_add(1));
    let outputs = compress_slices(&inputs, &queries, &params)?;

    #[derive(Serialize)]
    struct Block {
        block: String,
        input_tokens: usize,
        output_tokens: usize,
    }
    #[derive(Serialize)]
    struct CompressReport {
        dim: usize,
        seed: u64,
        blocks: Vec<Block>,
        output_tokens: usize,
    }
    let report = CompressReport {
        dim,
        seed,
        blocks: names
            .into_iter()
            .zip(&inputs)
            .zip(&outputs)
            .map(|((block, i), o)| Block {
                block,
                input_tokens: i.count(),
                output_tokens: o.count(),
            })
            .collect(),
        output_tokens: outputs.iter().map(TokenMatrix::count).sum(),
    };
    ctx.emit_with_artifact(&report, || {
        let views: Vec<_> = outputs.iter().map(|o| o.values().view()).collect();
        let stacked: Array2<f64> = ndarray::concatenate(Axis(0), &views)?;
        Ok(binfmt::encode(&stacked.insert_axis(Axis(1)))?)
    })?;
    Ok(Outcome::Pass)
}

fn grad(ctx: &Ctx, args: crate::GradCheckArgs) -> Result<Outcome> {
    let seed = ctx.config.seeds.resampler;
    let queries = QuerySet::seeded(args.queries, args.dim, seed);
    let tokens = TokenMatrix::seeded(args.tokens, args.dim, seed.wrapping_add(1));
    let params = AttentionParams::seeded(args.dim, seed.wrapping_add(2));
    let probe = Array2::from_shape_fn((args.queries.max(1), args.dim.max(1)), |(i, j)| {
        ((i * args.dim + j) as f64 * 0.37).sin()
    });
    let report = grad_check(&queries, &tokens, &params, args.eps, &probe)?;
    #[derive(Serialize)]
    struct GradReport {
        eps: f64,
        tolerance: f64,
        #[serde(flatten)]
        report: tilewise_core::resampler::GradCheckReport,
        pass: bool,
    }
    let pass = report.max_rel_err < args.tolerance;
    ctx.emit(&GradReport {
        eps: args.eps,
        tolerance: args.tolerance,
        report,
        pass,
    })?;
    Ok(Outcome::from_pass(pass))
}

fn cost(ctx: &Ctx, cmd: CostCommand) -> Result<Outcome> {
    let model = &ctx.config.model;
    match cmd {
        CostCommand::Estimate {
            image,
            strategy,
            text_tokens,
        } => {
            #[derive(Serialize)]
            struct Estimate {
                image: String,
                strategy: Strategy,
                report: CostReport,
            }
            let report = strategy.estimate(model, image, text_tokens)?;
            ctx.emit(&Estimate {
                image: image.to_string(),
                strategy,
                report,
            })?;
        }
        CostCommand::Compare { a, b, image } => ctx.emit(&compare_strategies(model, a, b, image)?)?,
    }
    Ok(Outcome::Pass)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_aspect(s: &str) -> Result<(f64, f64)> {
    let (w, h) = s.split_once(':').with_context(|| format!("aspect {s:?} is not W:H"))?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}

fn probe(ctx: &Ctx, cmd: ProbeCommand) -> Result<Outcome> {
    match cmd {
        ProbeCommand::Heatmap { canvas, step, template } => {
            let template: Vec<SceneObject> = match template {
                Some(path) => read_json(&path)?,
                None => four_object_template(24.0, 8.0, Shape::Circle, Color::Red),
            };
            ctx.emit(&heatmap_probe(canvas, &template, step)?)?;
        }
        ProbeCommand::Phases { scene, scales } => {
            let scene = match scene {
                Some(path) => {
                    let s: SyntheticScene = read_json(&path)?;
                    s.validate()?;
                    s
                }
                None => SyntheticScene::counting_grid(
                    ImageSize::new(512, 512)?,
                    3,
                    3,
                    Shape::Circle,
                    Color::Red,
                    Color::White,
                )?,
            };
            #[derive(Serialize)]
            struct Phase {
                scale: f64,
                #[serde(flatten)]
                report: tilewise_core::probes::PhaseReport,
            }
            let reports = scales
                .iter()
                .map(|&scale| {
                    Ok(Phase {
                        scale,
                        report: phase_classify(&scene, scale)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ctx.emit(&reports)?;
        }
        ProbeCommand::Padding { aspect, side } => {
            let (w, h) = parse_aspect(&aspect)?;
            #[derive(Serialize)]
            struct Padding {
                aspect: String,
                effective_fraction: f64,
            }
            let report = Padding {
                effective_fraction: padding_waste(w, h)?,
                aspect,
            };
            ctx.emit_with_artifact(&report, || {
                Ok(render_scene(&SyntheticScene::padding_probe(side, w, h, Color::Green)?))
            })?;
        }
        ProbeCommand::Render { scene } => {
            let scene: SyntheticScene = read_json(&scene)?;
            scene.validate()?;
            let Some(out) = &ctx.global.out else {
                bail!("render needs --out");
            };
            write_bytes(&render_scene(&scene), out)?;
        }
    }
    Ok(Outcome::Pass)
}

fn interp(ctx: &Ctx, args: crate::InterpArgs) -> Result<Outcome> {
    let src = match &args.src {
        Some(path) => binfmt::decode(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)?,
        None => {
            let seed = ctx.config.seeds.resampler as f64;
            let side = (ctx.config.vit.budget() as f64).sqrt() as usize;
            Array3::from_shape_fn((side, side, args.dim), |(i, j, c)| {
                ((i * 31 + j * 17 + c) as f64 * 0.01 + seed).sin()
            })
        }
    };
    if args.cols == 0 || args.rows == 0 {
        bail!("target grid must be at least 1x1");
    }
    let src = PosEmbedGrid::new(src)?;
    let out = interpolate_pos_embed(&src, PatchGrid { cols: args.cols, rows: args.rows });
    #[derive(Serialize)]
    struct InterpReport {
        source: [usize; 3],
        target: [usize; 3],
        min: f64,
        max: f64,
    }
    let report = InterpReport {
        source: [src.rows(), src.cols(), src.dim()],
        target: [out.rows(), out.cols(), out.dim()],
        min: out.values().iter().copied().fold(f64::INFINITY, f64::min),
        max: out.values().iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    ctx.emit_with_artifact(&report, || Ok(binfmt::encode(out.values())?))?;
    Ok(Outcome::Pass)
}
