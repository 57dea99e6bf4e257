mod conv;
mod norm;
mod simple;

pub(crate) use conv::Conv2d;
pub(crate) use norm::{BatchNorm, BnCache};
pub(crate) use simple::*;
