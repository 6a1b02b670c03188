use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "labsteg", version, about = "Action steganography in a labyrinth game")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand. Flags override the key file, which
/// overrides built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed (base seed for commands that cover several mazes)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Key file (JSON, as written by `keygen`)
    #[arg(long)]
    pub key: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a fresh key file to <out>/key.json
    Keygen {
        #[command(flatten)]
        common: Common,
        /// Number of stego agents (power of two)
        #[arg(long, default_value_t = 2)]
        agents: usize,
        /// Labyrinth seed; defaults to --seed
        #[arg(long)]
        maze_seed: Option<u64>,
        /// Training episodes per agent
        #[arg(long)]
        budget: Option<usize>,
        /// Use the dense approximator instead of the table
        #[arg(long)]
        dense: bool,
    },
    /// Generate labyrinths and an obstacle-count histogram
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Train stego systems and cover agents, one directory per maze
    Train {
        #[command(flatten)]
        common: Common,
        /// Mazes to train; 1 with --key, 100 otherwise
        #[arg(long)]
        count: Option<usize>,
        /// Train only the baseline agents
        #[arg(long)]
        cover_only: bool,
        /// Replace existing snapshots instead of refusing
        #[arg(long)]
        overwrite: bool,
        /// Training episodes per agent
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Episode length and completion of cover and stego agents
    EvalDistortion {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Systems,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Per-step random-action probability
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Observer probability of the true identity per episode
    EvalCapacity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Systems,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
    /// Eve's steganalysis, learning and inference phase
    EvalSecrecy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Systems,
        #[arg(long, default_value_t = 10)]
        eve_seeds: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 4)]
        shadows: usize,
        #[arg(long, default_value_t = 100)]
        episodes_per_class: usize,
    },
    /// Completion, timesteps and identifiability under action noise
    EvalRobustness {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Systems,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        p_values: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Draw a labyrinth with trajectories as SVG
    Render {
        #[command(flatten)]
        common: Common,
        /// Maze file (.txt or .json)
        #[arg(long)]
        maze: Option<PathBuf>,
        /// Trained maze directory; draws the cover and stego greedy paths
        #[arg(long)]
        system: Option<PathBuf>,
        /// Episode files (one episode or a list)
        #[arg(long)]
        episodes: Vec<PathBuf>,
        #[arg(long, default_value = "render.svg")]
        name: String,
    },
    /// Encode a bit string into episodes (<out>/episodes.json)
    Encode {
        #[command(flatten)]
        common: Common,
        /// Message bits, e.g. 10110
        #[arg(long)]
        message: String,
        /// System snapshot; rebuilt from the key when absent
        #[arg(long)]
        system: Option<PathBuf>,
    },
    /// Decode episodes back into bits
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        system: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Systems {
    /// Directory written by `train`; defaults to --out
    #[arg(long)]
    pub systems: Option<PathBuf>,
}
