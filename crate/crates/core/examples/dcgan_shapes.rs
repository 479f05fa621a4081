//! Plain DCGAN on procedural shapes, writing a sample grid after training.
//!
//! ```text
//! cargo run --release --example dcgan_shapes -- [epochs] [out.pgm]
//! ```

use ecgan::data::{denormalize, synth_shapes, write_pnm};
use ecgan::harness::tile;
use ecgan::nn::{Network, NetworkSpec, Role};
use ecgan::optim::{Adam, AdamConfig};
use ecgan::tensor::Rng;
use ecgan::train::{discriminator_step, generator_step, sample_images};

fn main() -> ecgan::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(5, |s| s.parse().expect("epochs"));
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("dcgan_shapes.pgm").display().to_string());

    let data = synth_shapes(64, 4, 16, 0.05, 0)?;
    let mut rng = Rng::seed(1);
    let mut g = Network::build(&NetworkSpec::new(Role::Generator, 16, 1, 4), &mut rng)?;
    let mut d = Network::build(&NetworkSpec::new(Role::Discriminator, 16, 1, 4), &mut rng)?;
    let (mut opt_g, mut opt_d) = (Adam::new(AdamConfig::gan(2e-4)), Adam::new(AdamConfig::gan(2e-4)));

    let mut step = 0;
    for epoch in 0..epochs {
        let (mut ld, mut lg, mut n) = (0.0, 0.0, 0.0);
        for idx in ecgan::data::epoch_batches(data.len(), 32, 0, epoch) {
            let batch = data.batch(&idx, None);
            ld += discriminator_step(&mut d, &mut g, &batch, &mut opt_d, &mut rng, step)?;
            lg += generator_step(&mut g, &mut d, idx.len(), &mut opt_g, &mut rng, step)?;
            step += 1;
            n += 1.0;
        }
        println!("epoch {epoch}: L_D {:.4}  L_G {:.4}", ld / n, lg / n);
    }

    let samples = sample_images(&mut g, 16, None, &mut Rng::seed(2))?;
    write_pnm(std::path::Path::new(&out), &tile(&denormalize(&samples)))?;
    println!("wrote {out}");
    Ok(())
}
