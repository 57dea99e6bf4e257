//! Splice a blurred donor region into a tile from another product and
//! localize it with K-means and GMM clustering of a noise-residual map.
//!
//! The fingerprint here is a fixed relative residual energy map, so the
//! example needs no trained model.

use sarsplice::editops::EditDescriptor;
use sarsplice::fingerprint::relative_residual_energy;
use sarsplice::maskest::{cluster_mask, ClusterMethod, DEFAULT_CLUSTERS};
use sarsplice::metrics::{balanced_accuracy, confusion, iou};
use sarsplice::raster::{partition_product, Fingerprint};
use sarsplice::splicer::make_splice;
use sarsplice::synthgrd::{gen_product, ProductSignature, SceneConfig};

fn main() -> sarsplice::Result<()> {
    let donor_prod = gen_product(&SceneConfig::new(512, 512, 3), &ProductSignature::palette(1), 30)?;
    let target_prod = gen_product(&SceneConfig::new(512, 512, 4), &ProductSignature::palette(0), 40)?;
    let donor = partition_product(&donor_prod.raster, 512, "D", &donor_prod.provenance)?.remove(0);
    let target = partition_product(&target_prod.raster, 512, "T", &target_prod.provenance)?.remove(0);

    let s = make_splice(&donor, &target, &EditDescriptor::average_blur(), 256, 5)?;
    println!("{} splice at {:?}", s.mode.as_str(), s.region);

    let fp = Fingerprint::new(relative_residual_energy(s.tile.normalize().pixels()), "residual-energy")?.standardized();
    for method in [ClusterMethod::Kmeans, ClusterMethod::Gmm] {
        let mask = cluster_mask(&fp, method, DEFAULT_CLUSTERS, 0)?;
        let c = confusion(&mask, &s.mask)?;
        println!("{method:?}: IoU {:.3}  BA {:.3}", iou(&c)?, balanced_accuracy(&c)?);
    }
    Ok(())
}
