use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LremError, Result};

const BRANDS: [&str; 40] = [
    "acme", "apex", "aurora", "bolt", "cobalt", "delta", "ember", "fjord", "granite", "halo", "ion", "jade",
    "kestrel", "lumen", "maple", "nova", "onyx", "pioneer", "quartz", "ridge", "sable", "tundra", "umbra",
    "vertex", "willow", "xenon", "yarrow", "zephyr", "birch", "cedar", "dune", "echo", "flint", "glacier",
    "harbor", "iris", "juniper", "krypton", "lotus", "meridian",
];

const CATEGORIES: [(&str, [&str; 5]); 10] = [
    ("phone", ["dualsim", "foldable", "rugged", "fiveg", "oled"]),
    ("laptop", ["ultralight", "touchscreen", "gaming", "convertible", "backlit"]),
    ("sneaker", ["leather", "mesh", "slipon", "hightop", "vegan"]),
    ("jacket", ["hooded", "insulated", "windproof", "reversible", "fleece"]),
    ("blender", ["cordless", "glassjar", "highspeed", "vacuum", "personal"]),
    ("kettle", ["gooseneck", "stainless", "electric", "whistling", "glass"]),
    ("watch", ["analog", "solar", "titanium", "chronograph", "smart"]),
    ("backpack", ["rolltop", "padded", "antitheft", "expandable", "laptopsleeve"]),
    ("headphone", ["overear", "noisecancel", "bluetooth", "openback", "studio"]),
    ("camera", ["mirrorless", "fullframe", "instant", "zoom", "weathersealed"]),
];

const ACTIVITIES: [(&str, [&str; 2]); 8] = [
    ("hiking", ["trekpole", "canteen"]),
    ("camping", ["tent", "lantern"]),
    ("cycling", ["helmet", "bikelight"]),
    ("swimming", ["goggles", "swimcap"]),
    ("skiing", ["skigloves", "beanie"]),
    ("fishing", ["tacklebox", "waders"]),
    ("running", ["armband", "visor"]),
    ("climbing", ["chalkbag", "harness"]),
];

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september", "october",
    "november", "december",
];

const PRODUCE: [&str; 12] = [
    "orange", "lemon", "rhubarb", "strawberry", "cherry", "apricot", "peach", "plum", "fig", "grape", "pear",
    "quince",
];

pub const ACCESSORY_DESCRIPTORS: [&str; 6] = ["lightweight", "durable", "pro", "classic", "mini", "xl"];
pub const PRODUCE_QUALITY: [&str; 4] = ["fresh", "organic", "local", "ripe"];
pub const PRODUCE_PACK: [&str; 4] = ["box", "bag", "crate", "bunch"];
pub const PROHIBITED: [&str; 5] = ["cheapest", "replica", "fake", "counterfeit", "knockoff"];

/// Months a produce type stays in season.
pub const SEASON_LENGTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSizes {
    pub brands: usize,
    pub peer_group: usize,
    pub categories: usize,
    pub attributes_per_category: usize,
    /// Goods items carry between 1 and this many attributes.
    pub max_item_attributes: usize,
    pub months: usize,
    pub activities: usize,
    pub accessories_per_activity: usize,
}

impl Default for WorldSizes {
    fn default() -> Self {
        WorldSizes {
            brands: 20,
            peer_group: 4,
            categories: 10,
            attributes_per_category: 5,
            max_item_attributes: 3,
            months: 12,
            activities: 8,
            accessories_per_activity: 2,
        }
    }
}

impl WorldSizes {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.brands,
            self.peer_group,
            self.categories,
            self.attributes_per_category,
            self.max_item_attributes,
            self.months,
            self.activities,
            self.accessories_per_activity,
        ];
        if fields.contains(&0) {
            return Err(LremError::Config("world sizes must be positive".into()));
        }
        if self.peer_group < 2 || self.brands % self.peer_group != 0 {
            return Err(LremError::Config(format!(
                "{} brands cannot be split into peer groups of {}",
                self.brands, self.peer_group
            )));
        }
        if self.attributes_per_category < 2 {
            return Err(LremError::Config("categories need at least 2 attributes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub name: String,
    pub accessories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Produce {
    pub name: String,
    /// Month indices in season.
    pub months: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub brands: Vec<String>,
    /// Disjoint groups of brand indices; brands in one group are alternatives to each other.
    pub peer_groups: Vec<Vec<usize>>,
    pub categories: Vec<Category>,
    pub activities: Vec<Activity>,
    pub months: Vec<String>,
    pub produce: Vec<Produce>,
    pub prohibited: Vec<String>,
    pub max_item_attributes: usize,
}

fn name(list: &[&str], i: usize, prefix: &str) -> String {
    list.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("{prefix}{i}"))
}

pub fn gen_world(seed: u64, sizes: &WorldSizes) -> Result<World> {
    sizes.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let brands: Vec<String> = (0..sizes.brands).map(|i| name(&BRANDS, i, "brand")).collect();
    let mut order: Vec<usize> = (0..sizes.brands).collect();
    order.shuffle(&mut rng);
    let peer_groups = order
        .chunks(sizes.peer_group)
        .map(|c| {
            let mut g = c.to_vec();
            g.sort_unstable();
            g
        })
        .collect();

    let categories = (0..sizes.categories)
        .map(|c| {
            let (cname, attrs) = CATEGORIES.get(c).copied().unwrap_or(("", [""; 5]));
            let cname = if cname.is_empty() { format!("category{c}") } else { cname.to_string() };
            let attributes = (0..sizes.attributes_per_category)
                .map(|a| match attrs.get(a) {
                    Some(s) if !s.is_empty() => s.to_string(),
                    _ => format!("{cname}feature{a}"),
                })
                .collect();
            Category { name: cname, attributes }
        })
        .collect();

    let activities = (0..sizes.activities)
        .map(|a| {
            let (aname, acc) = ACTIVITIES.get(a).copied().unwrap_or(("", [""; 2]));
            let aname = if aname.is_empty() { format!("activity{a}") } else { aname.to_string() };
            let accessories = (0..sizes.accessories_per_activity)
                .map(|k| match acc.get(k) {
                    Some(s) if !s.is_empty() => s.to_string(),
                    _ => format!("{aname}gear{k}"),
                })
                .collect();
            Activity { name: aname, accessories }
        })
        .collect();

    let months: Vec<String> = (0..sizes.months).map(|i| name(&MONTHS, i, "month")).collect();
    // one produce type per month, in season for SEASON_LENGTH consecutive months from a random start
    let offset = rng.random_range(0..sizes.months);
    let produce = (0..sizes.months)
        .map(|p| Produce {
            name: name(&PRODUCE, p, "produce"),
            months: (0..SEASON_LENGTH.min(sizes.months))
                .map(|k| (p + offset + k) % sizes.months)
                .collect(),
        })
        .collect();

    Ok(World {
        seed,
        brands,
        peer_groups,
        categories,
        activities,
        months,
        produce,
        prohibited: PROHIBITED.iter().map(|s| s.to_string()).collect(),
        max_item_attributes: sizes.max_item_attributes,
    })
}

impl World {
    pub fn peers_of(&self, brand: usize) -> &[usize] {
        self.peer_groups
            .iter()
            .find(|g| g.contains(&brand))
            .map(|g| g.as_slice())
            .unwrap_or(&[])
    }

    pub fn accessory_types(&self) -> Vec<(usize, usize)> {
        self.activities
            .iter()
            .enumerate()
            .flat_map(|(a, act)| (0..act.accessories.len()).map(move |k| (a, k)))
            .collect()
    }

    pub fn in_season(&self, month: usize) -> Vec<usize> {
        (0..self.produce.len())
            .filter(|&p| self.produce[p].months.contains(&month))
            .collect()
    }

    /// Every word that can occur in a title, a query or a CoT.
    pub fn surface_tokens(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = BTreeSet::new();
        out.extend(self.brands.iter().cloned());
        for c in &self.categories {
            out.insert(c.name.clone());
            out.extend(c.attributes.iter().cloned());
        }
        for a in &self.activities {
            out.insert(a.name.clone());
            out.extend(a.accessories.iter().cloned());
        }
        out.extend(self.months.iter().cloned());
        out.extend(self.produce.iter().map(|p| p.name.clone()));
        out.extend(self.prohibited.iter().cloned());
        for w in ACCESSORY_DESCRIPTORS.iter().chain(&PRODUCE_QUALITY).chain(&PRODUCE_PACK) {
            out.insert(w.to_string());
        }
        for templates in super::TEMPLATES {
            for t in templates {
                out.extend(t.split_whitespace().filter(|w| !w.starts_with('{')).map(str::to_string));
            }
        }
        out
    }
}
