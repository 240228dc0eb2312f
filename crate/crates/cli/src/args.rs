use std::net::SocketAddr;
use std::path::PathBuf;

use castid::dataset::SplitName;
use castid::embedding::SamplingStrategy;
use castid::{LossKind, Metric};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "castid",
    version,
    about = "Name the characters behind \"someone\" in movie captions"
)]
pub struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Link per-frame face detections into tracks.
    Tracks(TracksArgs),
    /// Ward-cluster the face tracks of each movie.
    Cluster(ClusterArgs),
    /// Generate train/val/test splits.
    Split(SplitArgs),
    /// Train a verb-track embedding.
    Train(TrainArgs),
    /// Train, then report replacement and face accuracy.
    Evaluate(EvaluateArgs),
    /// Replace `someone` in captions with predicted names.
    Replace(ReplaceArgs),
    /// Dataset statistics.
    Stats(StatsArgs),
    /// Write a synthetic data set.
    Synth(SynthArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
}

/// A data directory holds `annotations.json` and the three feature files.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Split file; generated from the seed when absent.
    #[arg(long, value_name = "FILE")]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOpts {
    #[arg(long, default_value = "proposed", value_parser = parse_loss)]
    pub loss: LossKind,
    #[arg(long, default_value = "euclidean", value_parser = parse_metric)]
    pub metric: Metric,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// within_clip or dataset_wide.
    #[arg(long, value_parser = parse_sampling)]
    pub sampling: Option<SamplingStrategy>,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: castid::Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: castid::Error| e.to_string())
}

fn parse_sampling(s: &str) -> Result<SamplingStrategy, String> {
    s.parse().map_err(|e: castid::Error| e.to_string())
}

fn parse_split_name(s: &str) -> Result<SplitName, String> {
    s.parse().map_err(|e: castid::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct TracksArgs {
    /// JSON lines of {"frame", "box", "patch"}.
    #[arg(long, value_name = "FILE")]
    pub detections: PathBuf,
    /// Clip id used in track ids; defaults to the file stem.
    #[arg(long)]
    pub clip_id: Option<String>,
    /// Number of frames in the clip; defaults to the last detected frame + 1.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub t_iou: Option<f64>,
    #[arg(long)]
    pub t_visual: Option<f64>,
    #[arg(long)]
    pub t_counter: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Movies to cluster; all when absent.
    #[arg(long = "movie")]
    pub movies: Vec<String>,
    /// Exact number of clusters per movie.
    #[arg(long, conflicts_with = "height")]
    pub k: Option<usize>,
    /// Cut the dendrogram at this merge height.
    #[arg(long)]
    pub height: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Checkpoint path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainOpts,
    /// Neighbours in the face classifier.
    #[arg(long)]
    pub k: Option<usize>,
    /// Random-baseline trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Rebuild the face index on a target data set from this fraction of its tracks.
    #[arg(long, requires = "target")]
    pub bootstrap: Option<f64>,
    /// Target data directory for the bootstrap protocol.
    #[arg(long, value_name = "DIR", requires = "bootstrap")]
    pub target: Option<PathBuf>,
    #[arg(long, value_name = "FILE", default_value = "report.json")]
    pub report: PathBuf,
    /// Best and worst movies as CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Also save the selected model.
    #[arg(long, value_name = "FILE")]
    pub model_out: Option<PathBuf>,
    /// Exit with status 3 when test replacement accuracy is below this.
    #[arg(long)]
    pub min_accuracy: Option<f64>,
    /// Exit with status 3 when test face accuracy is below this.
    #[arg(long)]
    pub min_face_accuracy: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReplaceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Which clips to name; the face index always comes from train.
    #[arg(long, default_value = "test", value_parser = parse_split_name)]
    pub clips: SplitName,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// JSON synthetic spec; flags below override its fields.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub movies: Option<usize>,
    #[arg(long)]
    pub characters: Option<usize>,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub verbs: Option<usize>,
    #[arg(long)]
    pub visual_dim: Option<usize>,
    #[arg(long)]
    pub face_dim: Option<usize>,
    #[arg(long)]
    pub verb_dim: Option<usize>,
    #[arg(long)]
    pub movie_prefix: Option<String>,
    #[arg(long)]
    pub world_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Cluster export from `cluster`.
    #[arg(long, value_name = "FILE")]
    pub clusters: PathBuf,
    /// Audit log; replayed on start, appended per event.
    #[arg(long, value_name = "FILE")]
    pub audit: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}
