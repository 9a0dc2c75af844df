use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Commutative reduction over per-pair embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregator {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Gaussian head, deterministic representation only.
    Deterministic,
    /// Gaussian head with a global latent `z` concatenated to `r`.
    Latent { z_dim: usize },
    /// Categorical head over `classes`, per-class aggregation.
    Classifier { classes: usize },
}

/// Shape settings of a conditional neural process.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub x_dim: usize,
    /// Output dimension; for classifiers this is the one-hot label width.
    pub y_dim: usize,
    pub repr_dim: usize,
    pub hidden: usize,
    /// Linear layers in the encoder `h`.
    pub encoder_layers: usize,
    /// Linear layers in the decoder `g`.
    pub decoder_layers: usize,
    /// Linear layers in the latent network.
    pub latent_layers: usize,
    pub activation: Activation,
    pub aggregator: Aggregator,
    pub variant: Variant,
    pub sigma_floor: f64,
}

impl ModelConfig {
    pub fn regression(x_dim: usize, y_dim: usize) -> Self {
        Self {
            x_dim,
            y_dim,
            repr_dim: 128,
            hidden: 128,
            encoder_layers: 3,
            decoder_layers: 5,
            latent_layers: 3,
            activation: Activation::Relu,
            aggregator: Aggregator::Mean,
            variant: Variant::Deterministic,
            sigma_floor: 0.01,
        }
    }

    pub fn latent(x_dim: usize, y_dim: usize, z_dim: usize) -> Self {
        Self {
            variant: Variant::Latent { z_dim },
            ..Self::regression(x_dim, y_dim)
        }
    }

    pub fn classifier(x_dim: usize, classes: usize) -> Self {
        Self {
            variant: Variant::Classifier { classes },
            ..Self::regression(x_dim, classes)
        }
    }

    pub fn z_dim(&self) -> Option<usize> {
        match self.variant {
            Variant::Latent { z_dim } => Some(z_dim),
            _ => None,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match self.variant {
            Variant::Classifier { classes } => Some(classes),
            _ => None,
        }
    }

    /// Width of the head output per target.
    pub fn head_width(&self) -> usize {
        match self.variant {
            Variant::Classifier { classes } => classes,
            _ => 2 * self.y_dim,
        }
    }

    /// Width of the representation fed to the decoder.
    pub fn decoder_repr_width(&self) -> usize {
        match self.variant {
            Variant::Classifier { classes } => classes * self.repr_dim,
            _ => self.repr_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("x_dim", self.x_dim),
            ("y_dim", self.y_dim),
            ("repr_dim", self.repr_dim),
            ("hidden", self.hidden),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("latent_layers", self.latent_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model {name} must be positive")));
        }
        match self.variant {
            Variant::Latent { z_dim: 0 } => return Err(Error::invalid("z_dim must be positive")),
            Variant::Classifier { classes } if classes == 0 || classes != self.y_dim => {
                return Err(Error::invalid(
                    "classifier y_dim must equal the class count (one-hot labels)",
                ))
            }
            _ => {}
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::invalid("sigma_floor must be positive"));
        }
        Ok(())
    }
}
