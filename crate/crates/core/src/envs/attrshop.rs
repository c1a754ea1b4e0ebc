//! A three-item shop scored by attribute overlap.
//!
//! The catalog holds the target product, a near miss with one wrong
//! attribute, and a product of the wrong type. `search` reveals which
//! type-matching item is cheapest, `select_i` opens an item page that shows
//! how well it fits, and `buy` ends the episode with [`shop_reward`].

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvKind, HiddenTruth, Outcome, Query};
use crate::error::{Error, Result};
use crate::policy::{TokenId, Vocabulary};

pub(super) const CATALOG_SIZE: usize = 3;
const PRODUCT_TYPES: usize = 3;
const ATTRIBUTE_POOL: u32 = 4;
const OPTION_POOL: u32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShopInstruction {
    pub product_type: u32,
    pub attributes: Vec<u32>,
    pub options: Vec<u32>,
    pub price_cap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShopPurchase {
    pub product_type: u32,
    pub attributes: Vec<u32>,
    pub options: Vec<u32>,
    pub price: f64,
}

fn check_set(items: &[u32], what: &str) -> Result<()> {
    let unique: BTreeSet<_> = items.iter().collect();
    if unique.len() != items.len() {
        return Err(Error::InvalidInput(format!("duplicate entries in {what}")));
    }
    Ok(())
}

fn check_price(p: f64, what: &str) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} must be positive, got {p}")));
    }
    Ok(())
}

impl ShopInstruction {
    pub fn validate(&self) -> Result<()> {
        check_set(&self.attributes, "instruction attributes")?;
        check_set(&self.options, "instruction options")?;
        check_price(self.price_cap, "price cap")
    }
}

impl ShopPurchase {
    pub fn validate(&self) -> Result<()> {
        check_set(&self.attributes, "purchase attributes")?;
        check_set(&self.options, "purchase options")?;
        check_price(self.price, "price")
    }
}

/// Type-gated fraction of satisfied requirements: matching attributes,
/// matching options, and staying within the price cap.
pub fn shop_reward(instruction: &ShopInstruction, purchase: &ShopPurchase) -> Result<f64> {
    instruction.validate()?;
    purchase.validate()?;
    if instruction.product_type != purchase.product_type {
        return Ok(0.0);
    }
    let overlap = |want: &[u32], have: &[u32]| want.iter().filter(|w| have.contains(w)).count();
    let hits = overlap(&instruction.attributes, &purchase.attributes)
        + overlap(&instruction.options, &purchase.options)
        + usize::from(purchase.price <= instruction.price_cap);
    let total = instruction.attributes.len() + instruction.options.len() + 1;
    Ok(hits as f64 / total as f64)
}

pub(super) fn validate(instruction: &ShopInstruction, catalog: &[ShopPurchase]) -> Result<()> {
    instruction.validate()?;
    if catalog.len() != CATALOG_SIZE {
        return Err(Error::Config(format!(
            "attr_shop catalog must hold {CATALOG_SIZE} items, got {}",
            catalog.len()
        )));
    }
    if instruction.product_type as usize >= PRODUCT_TYPES {
        return Err(Error::Config("unknown product type".into()));
    }
    catalog.iter().try_for_each(ShopPurchase::validate)
}

fn reward_of(instruction: &ShopInstruction, item: &ShopPurchase) -> f64 {
    shop_reward(instruction, item).expect("catalog validated at reset")
}

/// Index of the highest-scoring catalog item (lowest index on ties).
pub(super) fn best_item(instruction: &ShopInstruction, catalog: &[ShopPurchase]) -> usize {
    let mut best = 0;
    for i in 1..catalog.len() {
        if reward_of(instruction, &catalog[i]) > reward_of(instruction, &catalog[best]) {
            best = i;
        }
    }
    best
}

/// Cheapest item of the requested type, falling back to the cheapest overall.
fn top_item(instruction: &ShopInstruction, catalog: &[ShopPurchase]) -> usize {
    let cheapest = |typed: bool| {
        (0..catalog.len())
            .filter(|&i| !typed || catalog[i].product_type == instruction.product_type)
            .min_by(|&a, &b| catalog[a].price.total_cmp(&catalog[b].price))
    };
    cheapest(true).or_else(|| cheapest(false)).unwrap_or(0)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(super) struct State {
    searched: bool,
    selected: Option<usize>,
}

#[derive(Clone, Debug)]
pub(super) struct Tokens {
    search: TokenId,
    pub select: Vec<TokenId>,
    buy: TokenId,
    pub storefront: TokenId,
    top: Vec<TokenId>,
    page_full: TokenId,
    page_part: TokenId,
    page_none: TokenId,
    bought: TokenId,
    pub timeout: TokenId,
    nothing: TokenId,
}

pub(super) fn tables() -> (Vec<String>, Tokens) {
    let mut names: Vec<String> = (0..PRODUCT_TYPES).map(|t| format!("want_{t}")).collect();
    names.push("search".into());
    names.extend((0..CATALOG_SIZE).map(|i| format!("select_{i}")));
    names.push("buy".into());
    names.push("storefront".into());
    names.extend((0..CATALOG_SIZE).map(|i| format!("top_{i}")));
    names.extend(
        ["page_full", "page_part", "page_none", "bought", "timeout", "nothing"].map(String::from),
    );
    let p = TokenId(0);
    (
        names,
        Tokens {
            search: p,
            select: Vec::new(),
            buy: p,
            storefront: p,
            top: Vec::new(),
            page_full: p,
            page_part: p,
            page_none: p,
            bought: p,
            timeout: p,
            nothing: p,
        },
    )
}

impl Tokens {
    pub(super) fn resolve(self, vocab: &Vocabulary) -> Result<Self> {
        let family = |prefix: &str| -> Result<Vec<TokenId>> {
            (0..CATALOG_SIZE)
                .map(|i| vocab.id(&format!("{prefix}_{i}")))
                .collect()
        };
        Ok(Self {
            search: vocab.id("search")?,
            select: family("select")?,
            buy: vocab.id("buy")?,
            storefront: vocab.id("storefront")?,
            top: family("top")?,
            page_full: vocab.id("page_full")?,
            page_part: vocab.id("page_part")?,
            page_none: vocab.id("page_none")?,
            bought: vocab.id("bought")?,
            timeout: vocab.id("timeout")?,
            nothing: vocab.id("nothing")?,
        })
    }

    pub(super) fn actions(&self) -> Vec<TokenId> {
        let mut a = vec![self.search];
        a.extend(&self.select);
        a.push(self.buy);
        a
    }

    pub(super) fn step(&self, s: &mut State, query: &Query, action: Option<TokenId>) -> Outcome {
        let HiddenTruth::AttrShop {
            ref instruction,
            ref catalog,
        } = query.hidden_truth
        else {
            unreachable!("query validated at reset")
        };
        let nothing = Outcome::Continue(vec![self.nothing]);
        let Some(a) = action else {
            return nothing;
        };
        if a == self.search {
            s.searched = true;
            Outcome::Continue(vec![self.top[top_item(instruction, catalog)]])
        } else if let Some(i) = self.select.iter().position(|&t| t == a) {
            if !s.searched {
                return nothing;
            }
            s.selected = Some(i);
            let r = reward_of(instruction, &catalog[i]);
            let page = if r >= 1.0 {
                self.page_full
            } else if r > 0.0 {
                self.page_part
            } else {
                self.page_none
            };
            Outcome::Continue(vec![page])
        } else if a == self.buy {
            match s.selected {
                Some(i) => Outcome::Finish(vec![self.bought], reward_of(instruction, &catalog[i])),
                None => nothing,
            }
        } else {
            nothing
        }
    }
}

pub(super) fn generate<R: Rng + ?Sized>(id: u64, rng: &mut R) -> Query {
    let product_type = rng.random_range(0..PRODUCT_TYPES as u32);
    let mut attr_pool: Vec<u32> = (0..ATTRIBUTE_POOL).collect();
    attr_pool.shuffle(rng);
    let attributes = attr_pool[..2].to_vec();
    let options = vec![*(0..OPTION_POOL).collect::<Vec<_>>().choose(rng).unwrap()];
    let price_cap = f64::from(rng.random_range(50u32..=100));
    let mut price = || f64::from(rng.random_range(10u32..50));
    let target = ShopPurchase {
        product_type,
        attributes: attributes.clone(),
        options: options.clone(),
        price: price(),
    };
    let mut near_attrs = attributes.clone();
    near_attrs[1] = attr_pool[2];
    let near = ShopPurchase {
        product_type,
        attributes: near_attrs,
        options: options.clone(),
        price: price(),
    };
    let off = ShopPurchase {
        product_type: (product_type + 1) % PRODUCT_TYPES as u32,
        attributes: attributes.clone(),
        options: options.clone(),
        price: price(),
    };
    let mut catalog = vec![target, near, off];
    catalog.shuffle(rng);
    Query {
        id,
        kind: EnvKind::AttrShop,
        description: vec![format!("want_{product_type}")],
        hidden_truth: HiddenTruth::AttrShop {
            instruction: ShopInstruction {
                product_type,
                attributes,
                options,
                price_cap,
            },
            catalog,
        },
    }
}
